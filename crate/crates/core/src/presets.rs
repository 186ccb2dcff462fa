//! Built-in experiments: the published cooling protocols for potassium-40
//! plus their reduced desk-scale variants.
//!
//! Every preset is fully determined here, down to SI anchors. A scale
//! factor shrinks shell count and atom number together, holding
//! N^(1/3)/shells fixed so the Fermi level sits at the same relative depth,
//! and pulse durations shrink proportionally with the shell ladder being
//! emptied. Detunings scale about the recoil floor rather than zero: each
//! completed cycle removes |detuning| quanta but gives back eta^2 on
//! average in emission, so the scaled protocol keeps the net removal
//! |detuning| - eta^2 proportional to the ladder height. Scaling the raw
//! detuning instead drives the net negative in small traps and the
//! protocol heats.

use crate::error::{Error, Result};
use crate::kinetics::{Schedule, Stage};
use crate::matrix_elements::emission::EmissionPattern;
use crate::rates::PulseSpec;
use crate::statespace::{fermi_energy, TrapSpec};

/// Trap frequency omega = 2 pi x 2400 Hz.
pub const OMEGA: f64 = 2.0 * std::f64::consts::PI * 2400.0;
/// Potassium-40 mass, kg.
pub const MASS: f64 = 39.96399848 * 1.66053906660e-27;
/// Raman transition wavelength, m.
pub const WAVELENGTH: f64 = 770.108e-9;
/// Interspecies scattering length, 157 Bohr radii, m.
pub const A_SCATTER: f64 = 157.0 * 5.29177210903e-11;
/// Effective Lamb-Dicke parameter of the Raman pair.
pub const ETA: f64 = 2.0;
/// One-body background loss rate, 1/s.
pub const GAMMA_BG: f64 = 1.0 / 350.0;
/// Controller target for the many-atom emission rate, trap units.
pub const GAMMA_N_TARGET: f64 = 0.8;

/// Which storage arm(s) to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreArm {
    Both,
    On,
    Off,
}

impl StoreArm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(StoreArm::Both),
            "on" => Ok(StoreArm::On),
            "off" => Ok(StoreArm::Off),
            other => Err(Error::Config(format!(
                "store.lasers must be both, on, or off (got {other})"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StoreArm::Both => "both",
            StoreArm::On => "on",
            StoreArm::Off => "off",
        }
    }
}

/// A fully resolved experiment: trap, species, protocol, horizons.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: &'static str,
    pub scale: f64,
    pub spec: TrapSpec,
    pub pattern: EmissionPattern,
    pub n1: usize,
    /// Second-component atoms; 0 disables collisions.
    pub n2: usize,
    /// Initial temperature in units of T_F(n1).
    pub t_init_tf: f64,
    pub schedule: Schedule,
    /// Free-evolution horizon in seconds (thermalize, store lasers-off).
    pub free_seconds: f64,
    pub free_chunks: usize,
    pub arm: StoreArm,
}

impl Experiment {
    /// Initial temperature in trap units.
    pub fn t_init(&self) -> f64 {
        self.t_init_tf * fermi_energy(self.n1 as f64)
    }

    pub fn has_lasers(&self) -> bool {
        !self.schedule.stages.is_empty()
    }

    pub fn two_component(&self) -> bool {
        self.n2 > 0
    }
}

/// Shell count at `scale`, never below the smallest trap the pulse window
/// makes sense in.
fn scaled_shells(full: usize, scale: f64) -> usize {
    ((full as f64 * scale).round() as usize).max(8)
}

/// Atom number scaled as shells cubed.
fn scaled_atoms(full: usize, full_shells: usize, shells: usize) -> usize {
    let ratio = shells as f64 / full_shells as f64;
    (full as f64 * ratio.powi(3)).round() as usize
}

fn trap_spec(n_shells: usize) -> TrapSpec {
    TrapSpec {
        omega: OMEGA,
        n_shells,
        lamb_dicke: ETA,
        a_scatter: A_SCATTER,
        mass: MASS,
        wavelength: WAVELENGTH,
        gamma_bg: GAMMA_BG,
    }
}

/// Detuning at `scale`, anchored at the mean emission recoil eta^2.
fn scaled_detuning(det: f64, s: f64) -> f64 {
    let recoil = ETA * ETA;
    let net = (det.abs() - recoil).max(0.0);
    -(recoil + net * s)
}

/// One pulse pair with published parameters, scaled. The gamma written
/// here is a placeholder: the controller retunes it before every pulse.
fn stage(det: [f64; 2], rabi: [f64; 2], dur: [f64; 2], reps: u32, s: f64) -> Stage {
    let pulse = |i: usize| PulseSpec {
        detuning: scaled_detuning(det[i], s),
        rabi_ratio: rabi[i],
        gamma: 0.5,
        duration: dur[i] * s,
    };
    Stage { pulses: [pulse(0), pulse(1)], reps }
}

/// Final-stage adjustments at reduced scale. Off-resonant scattering per
/// cycle grows as 1/detuning^2 while the tail a deep pulse drains shrinks
/// with the trap, so a strong final pulse spends most of its length
/// heating a gas whose tail it has already emptied: its Rabi ratio is
/// capped. The pair count is raised so the smaller gas still reaches and
/// dwells at the stage's fixed point, giving the statistics window a
/// steady tail.
fn finalize_reduced(mut st: Stage, s: f64) -> Stage {
    if s < 1.0 {
        for p in &mut st.pulses {
            p.rabi_ratio = p.rabi_ratio.min(0.1);
        }
        st.reps = st.reps.max((6.0 / (s * s)).ceil() as u32);
    }
    st
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Config(format!("scale must be in (0, 1], got {scale}")));
    }
    Ok(())
}

/// Single-component cooling: three pulse-pair stages walking the detuning
/// deeper as the cloud shrinks, 5.4 s total at full scale.
pub fn cool1c(scale: f64) -> Result<Experiment> {
    check_scale(scale)?;
    let shells = scaled_shells(81, scale);
    Ok(Experiment {
        name: "cool1c",
        scale,
        spec: trap_spec(shells),
        pattern: EmissionPattern::Isotropic,
        n1: scaled_atoms(10660, 81, shells),
        n2: 0,
        t_init_tf: 1.04,
        schedule: Schedule {
            stages: vec![
                stage([-11.0, -12.0], [0.013, 0.013], [250.0, 250.0], 60, scale),
                stage([-16.0, -17.0], [0.007, 0.010], [500.0, 500.0], 39, scale),
                finalize_reduced(
                    stage([-19.0, -20.0], [0.100, 0.800], [2000.0, 4000.0], 2, scale),
                    scale,
                ),
            ],
            target: Some(GAMMA_N_TARGET),
        },
        free_seconds: 0.0,
        free_chunks: 0,
        arm: StoreArm::Both,
    })
}

/// Two-component cooling: same detuning ladder, weaker drives sized so no
/// more than a tenth of the atoms sit excited in any pulse, 5 s total.
pub fn cool2c(scale: f64) -> Result<Experiment> {
    check_scale(scale)?;
    let shells = scaled_shells(81, scale);
    let n = scaled_atoms(10660, 81, shells);
    Ok(Experiment {
        name: "cool2c",
        scale,
        spec: trap_spec(shells),
        pattern: EmissionPattern::Isotropic,
        n1: n,
        n2: n,
        t_init_tf: 1.0,
        schedule: Schedule {
            stages: vec![
                stage([-11.0, -12.0], [0.113, 0.113], [250.0, 250.0], 39, scale),
                stage([-16.0, -17.0], [0.008, 0.012], [2000.0, 2000.0], 7, scale),
                finalize_reduced(
                    stage([-19.0, -20.0], [0.0025, 0.004], [4000.0, 4000.0], 3, scale),
                    scale,
                ),
            ],
            target: Some(GAMMA_N_TARGET),
        },
        free_seconds: 0.0,
        free_chunks: 0,
        arm: StoreArm::Both,
    })
}

/// Collisions only: an equal mixture relaxing from a cold non-equilibrium
/// start, no lasers.
pub fn thermalize(scale: f64) -> Result<Experiment> {
    check_scale(scale)?;
    let shells = scaled_shells(40, scale);
    let n = scaled_atoms(2000, 40, shells);
    Ok(Experiment {
        name: "thermalize",
        scale,
        spec: trap_spec(shells),
        pattern: EmissionPattern::Isotropic,
        n1: n,
        n2: n,
        t_init_tf: 0.1,
        schedule: Schedule { stages: vec![], target: None },
        free_seconds: 0.400,
        free_chunks: 100,
        arm: StoreArm::Both,
    })
}

/// Storage of a produced degenerate mixture: hold for seconds with
/// background losses, either bare or under continued final-stage pulses.
/// The reduced-scale start sits slightly higher in T/T_F because the
/// smaller trap cannot resolve 0.03 T_F against its level spacing.
pub fn store(scale: f64) -> Result<Experiment> {
    check_scale(scale)?;
    let shells = scaled_shells(81, scale);
    let n = scaled_atoms(10660, 81, shells);
    let horizon_seconds = 10.0;
    let pair = (4000.0 + 4000.0) * scale;
    let reps = (OMEGA * horizon_seconds / pair).ceil() as u32;
    Ok(Experiment {
        name: "store",
        scale,
        spec: trap_spec(shells),
        pattern: EmissionPattern::Isotropic,
        n1: n,
        n2: n,
        t_init_tf: if scale < 1.0 { 0.05 } else { 0.03 },
        schedule: Schedule {
            stages: vec![stage(
                [-19.0, -20.0],
                [0.0025, 0.004],
                [4000.0, 4000.0],
                reps,
                scale,
            )],
            target: Some(GAMMA_N_TARGET),
        },
        free_seconds: horizon_seconds,
        free_chunks: 100,
        arm: StoreArm::Both,
    })
}

/// Table inspection: trap geometry only, no atoms, no protocol.
pub fn tables(scale: f64) -> Result<Experiment> {
    check_scale(scale)?;
    let shells = scaled_shells(81, scale);
    Ok(Experiment {
        name: "tables",
        scale,
        spec: trap_spec(shells),
        pattern: EmissionPattern::Isotropic,
        n1: 0,
        n2: 0,
        t_init_tf: 0.0,
        schedule: Schedule { stages: vec![], target: None },
        free_seconds: 0.0,
        free_chunks: 0,
        arm: StoreArm::Both,
    })
}

pub const PRESET_NAMES: [&str; 5] = ["cool1c", "cool2c", "thermalize", "store", "tables"];

pub fn preset(name: &str, scale: f64) -> Result<Experiment> {
    match name {
        "cool1c" => cool1c(scale),
        "cool2c" => cool2c(scale),
        "thermalize" => thermalize(scale),
        "store" => store(scale),
        "tables" => tables(scale),
        other => Err(Error::Config(format!(
            "unknown preset {other:?}; valid names: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}
