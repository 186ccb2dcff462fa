//! Event-driven engine: executes pulse schedules by exact stochastic
//! simulation of the rate equations, applies loss channels, and records
//! trajectories.
//!
//! One logical loop owns all mutable state. Between events the catalog is
//! static, so holding times are exponential at the current total rate and
//! events are selected proportionally to their channel rates. Laser and
//! collision channels are sampled through their envelopes (see `rates`):
//! a rejected candidate is a null event that advances the clock and
//! changes nothing, which leaves the realized process exact.

use crate::error::{Error, Result};
use crate::matrix_elements::displacement::OverlapBlock;
use crate::matrix_elements::utilde::UTildeTable;
use crate::matrix_elements::xi_table::XiTable;
use crate::rates::{
    gamma_controller_with, r_factors, CollisionRates, LaserRates, PulseSpec, SidebandXi,
};
use crate::statespace::{fermi_energy, Axis, Occupancy, ShellPopulation, Trap};
use crate::thermo::fit_fermi_dirac;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One cooling stage: a pulse pair repeated back to back. Two pulses with
/// slightly different detunings compensate the oscillatory transition
/// strengths, so a stage always carries exactly two.
#[derive(Debug, Clone, Copy)]
pub struct Stage {
    pub pulses: [PulseSpec; 2],
    pub reps: u32,
}

/// A full cooling protocol: ordered stages plus the emission-rate policy.
/// `target` engages the controller, retuning gamma before every pulse so
/// the many-atom rate gamma <R> holds at the target; None keeps each
/// pulse's own gamma.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub stages: Vec<Stage>,
    pub target: Option<f64>,
}

impl Schedule {
    /// Validate every pulse; collects soft warnings, errors on unusable
    /// parameters.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            for pulse in &stage.pulses {
                for w in pulse.validate()? {
                    warnings.push(format!("stage {}: {w}", i + 1));
                }
            }
        }
        if let Some(t) = self.target {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!(
                    "controller target {t} outside (0, 1) trap units"
                )));
            }
        }
        Ok(warnings)
    }

    /// Total scheduled time in trap units.
    pub fn duration(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| s.reps as f64 * (s.pulses[0].duration + s.pulses[1].duration))
            .sum()
    }
}

/// Physical event kinds, in log order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Completed Raman cycle of component 1: `from` emptied, `to` filled.
    Laser { from: u32, to: u32 },
    /// Interspecies collision by initial/final shells.
    Collision { e1: u16, e2: u16, e3: u16, e4: u16 },
    /// Background loss of a component-1 atom.
    Bg1 { state: u32 },
    /// Background loss of a component-2 atom.
    Bg2 { shell: u16 },
    /// Pulse-end removal of a still-excited atom.
    Removal { state: u32 },
}

#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

/// Atom losses by channel, cumulative over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LossCounts {
    pub bg1: u64,
    pub bg2: u64,
    pub removed: u64,
}

/// One trajectory point, taken after a pulse (or free-evolution chunk).
/// Fit fields are NaN when the fit is unavailable (too few atoms, no
/// optimum) and gamma fields are NaN when no laser or controller applies.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Trap-unit time.
    pub time: f64,
    pub n1: u32,
    pub n2: u32,
    pub quanta1: u64,
    pub quanta2: u64,
    /// Single-atom gamma of the pulse just run.
    pub gamma: f64,
    /// Controller-realized many-atom rate gamma <R>.
    pub gamma_n: f64,
    /// Excitation-weighted mean emission factor at the controller update.
    pub mean_r: f64,
    pub t1: f64,
    pub mu1: f64,
    pub t1_over_tf: f64,
    pub t2: f64,
    pub mu2: f64,
    pub t2_over_tf: f64,
    pub shells1: Vec<u32>,
    pub shells2: Vec<u32>,
    pub losses: LossCounts,
}

/// The stochastic engine. Owns the occupation state of component 1, the
/// shell populations of component 2 when present, and all rate machinery;
/// borrows the precomputed tables. Every random draw flows through one
/// seeded generator, so runs are bit-reproducible.
pub struct Engine<'a> {
    trap: &'a Trap,
    xi: Option<&'a XiTable>,
    overlap: Option<OverlapBlock>,
    sxi: Option<[SidebandXi; 3]>,
    coll: Option<CollisionRates>,
    occ: Occupancy,
    pop2: Option<ShellPopulation>,
    gamma_bg: f64,
    time: f64,
    pulse_counter: u64,
    rng: ChaCha8Rng,
    losses: LossCounts,
    n_events: u64,
    n_nulls: u64,
    events: Option<Vec<Event>>,
}

impl<'a> Engine<'a> {
    /// Assemble an engine. Lasers need `xi`; collisions need both a second
    /// component and a kernel, and are meaningless with only one of them.
    pub fn new(
        trap: &'a Trap,
        xi: Option<&'a XiTable>,
        utilde: Option<&'a UTildeTable>,
        occ: Occupancy,
        pop2: Option<ShellPopulation>,
        gamma_bg: f64,
        seed: u64,
        log_events: bool,
    ) -> Result<Self> {
        if !(gamma_bg >= 0.0) {
            return Err(Error::Config(format!("background rate {gamma_bg} negative")));
        }
        let coll = match (&pop2, utilde) {
            (Some(p2), Some(ut)) => {
                if p2.n_shells() != trap.n_shells() {
                    return Err(Error::Config(format!(
                        "component 2 spans {} shells, trap has {}",
                        p2.n_shells(),
                        trap.n_shells()
                    )));
                }
                let mut c = CollisionRates::new(ut, trap.n_shells())?;
                c.rebuild(occ.shell_counts(), p2.shell_counts());
                Some(c)
            }
            (None, None) => None,
            (Some(_), None) => {
                return Err(Error::Config(
                    "second component supplied without a collision kernel".into(),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::Config(
                    "collision kernel supplied without a second component".into(),
                ))
            }
        };
        let (overlap, sxi) = match xi {
            Some(x) => (
                Some(OverlapBlock::build(trap.e_max(), trap.e_max(), x.eta())),
                Some([
                    SidebandXi::build(trap, x, Axis::X),
                    SidebandXi::build(trap, x, Axis::Y),
                    SidebandXi::build(trap, x, Axis::Z),
                ]),
            ),
            None => (None, None),
        };
        Ok(Self {
            trap,
            xi,
            overlap,
            sxi,
            coll,
            occ,
            pop2,
            gamma_bg,
            time: 0.0,
            pulse_counter: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            losses: LossCounts::default(),
            n_events: 0,
            n_nulls: 0,
            events: log_events.then(Vec::new),
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn occupancy(&self) -> &Occupancy {
        &self.occ
    }

    pub fn population2(&self) -> Option<&ShellPopulation> {
        self.pop2.as_ref()
    }

    pub fn losses(&self) -> LossCounts {
        self.losses
    }

    /// Physical events applied so far (null candidates excluded).
    pub fn n_events(&self) -> u64 {
        self.n_events
    }

    /// Envelope candidates rejected by thinning.
    pub fn n_nulls(&self) -> u64 {
        self.n_nulls
    }

    /// Drain the event log (empty when logging is off).
    pub fn take_events(&mut self) -> Vec<Event> {
        self.events.take().map(|v| {
            self.events = Some(Vec::new());
            v
        })
        .unwrap_or_default()
    }

    /// Exponential holding time at the engine's current total rate, or
    /// None when nothing can fire. Advances only the random stream.
    pub fn sample_holding_time(&mut self, total: f64) -> f64 {
        -(1.0 - self.rng.gen::<f64>()).ln() / total
    }

    /// Current channel totals (laser envelope, collision envelope,
    /// background), with the laser term supplied by the caller since laser
    /// machinery lives only inside a pulse.
    fn background_totals(&self) -> (f64, f64) {
        let c = self.coll.as_ref().map_or(0.0, |c| c.envelope_total());
        let n2 = self.pop2.as_ref().map_or(0, |p| p.n_atoms());
        let bg = self.gamma_bg * (self.occ.n_atoms() + n2) as f64;
        (c, bg)
    }

    /// Run one pulse (or a rabi-zero free-evolution interval) to its end.
    pub fn run_pulse(&mut self, pulse: &PulseSpec, beam: Axis) -> Result<()> {
        pulse.validate()?;
        self.pulse_counter += 1;
        let t_end = self.time + pulse.duration;
        let lasing = pulse.rabi() > 0.0;
        if lasing && self.xi.is_none() {
            return Err(Error::Config("laser pulse without emission tables".into()));
        }
        let mut laser = if lasing {
            let xi = self.xi.unwrap();
            let sxi = &self.sxi.as_ref().unwrap()[beam.index()];
            let overlap = self.overlap.as_ref().unwrap();
            Some(LaserRates::new(self.trap, xi, sxi, overlap, &self.occ, *pulse))
        } else {
            None
        };
        // Completed cycles whose intermediate may outlive the pulse:
        // (provisional final state, probability the decay never happened).
        let mut pending: Vec<(u32, f64)> = Vec::new();
        let mut terms: Vec<(u32, f64)> = Vec::new();

        loop {
            let lam = laser.as_ref().map_or(0.0, |l| l.envelope_total());
            let (coll_env, bg) = self.background_totals();
            let n1 = self.occ.n_atoms() as f64;
            let bg1 = self.gamma_bg * n1;
            let total = lam + coll_env + bg;
            if !total.is_finite() || lam < 0.0 || coll_env < 0.0 {
                return Err(Error::Engine(format!(
                    "rate catalog inconsistent at t={:.6}: laser envelope {lam}, \
                     collision envelope {coll_env}, background {bg} (pulse {:?})",
                    self.time, pulse
                )));
            }
            if total <= 0.0 {
                break;
            }
            let wait = self.sample_holding_time(total);
            if self.time + wait >= t_end {
                break;
            }
            self.time += wait;
            let x = self.rng.gen::<f64>() * total;
            if x < lam {
                let laser = laser.as_mut().unwrap();
                let xi = self.xi.unwrap();
                let sxi = &self.sxi.as_ref().unwrap()[beam.index()];
                let overlap = self.overlap.as_ref().unwrap();
                let p = laser.sample_candidate(x);
                debug_assert!(self.occ.is_occupied(p));
                let lambda = laser.lambda(self.trap, sxi, overlap, p, &mut terms);
                if self.rng.gen::<f64>() * laser.envelope(p) >= lambda {
                    self.n_nulls += 1;
                    continue;
                }
                // Intermediate proportional to its sideband rate, final
                // proportional to open decay weight.
                let mut pick = self.rng.gen::<f64>() * lambda;
                let mut l = terms.last().unwrap().0;
                for &(cand, t) in &terms {
                    if pick < t {
                        l = cand;
                        break;
                    }
                    pick -= t;
                }
                let rl = laser.r(l);
                let Some(n) = laser.sample_final(xi, &self.occ, l, self.rng.gen::<f64>() * rl)
                else {
                    self.n_nulls += 1;
                    continue;
                };
                self.occ.vacate(self.trap, p);
                self.occ.occupy(self.trap, n);
                laser.apply_flip(xi, Some(p), Some(n));
                if let (Some(c), Some(p2)) = (self.coll.as_mut(), self.pop2.as_ref()) {
                    c.shell_changed_c1(self.trap.shell(p), self.occ.shell_counts(), p2.shell_counts());
                    c.shell_changed_c1(self.trap.shell(n), self.occ.shell_counts(), p2.shell_counts());
                }
                let undecayed = (-2.0 * pulse.gamma * rl * (t_end - self.time)).exp();
                pending.push((n, undecayed));
                self.record(EventKind::Laser { from: p, to: n });
            } else if x < lam + coll_env {
                let coll = self.coll.as_ref().unwrap();
                let y = (x - lam).min(coll_env * (1.0 - f64::EPSILON));
                let c = coll.sample(y);
                let p2 = self.pop2.as_ref().unwrap();
                let acc = coll.acceptance(c, self.occ.shell_counts(), p2.shell_counts());
                if self.rng.gen::<f64>() >= acc {
                    self.n_nulls += 1;
                    continue;
                }
                assert!(c.e1 + c.e2 == c.e3 + c.e4, "collision violates energy conservation");
                let from = pick_occupied_in_shell(self.trap, &self.occ, &mut self.rng, c.e1);
                let to = pick_hole_in_shell(self.trap, &self.occ, &mut self.rng, c.e3);
                self.occ.vacate(self.trap, from);
                self.occ.occupy(self.trap, to);
                let p2 = self.pop2.as_mut().unwrap();
                p2.remove(c.e2);
                p2.add(c.e4);
                if let Some(laser) = laser.as_mut() {
                    laser.apply_flip(self.xi.unwrap(), Some(from), Some(to));
                }
                let (n1s, n2s) = (self.occ.shell_counts(), self.pop2.as_ref().unwrap().shell_counts());
                let coll = self.coll.as_mut().unwrap();
                coll.shell_changed_c1(c.e1, n1s, n2s);
                coll.shell_changed_c1(c.e3, n1s, n2s);
                coll.shell_changed_c2(c.e2, n1s, n2s);
                coll.shell_changed_c2(c.e4, n1s, n2s);
                self.record(EventKind::Collision {
                    e1: c.e1 as u16,
                    e2: c.e2 as u16,
                    e3: c.e3 as u16,
                    e4: c.e4 as u16,
                });
            } else if x < lam + coll_env + bg1 {
                let state = pick_occupied_any(self.trap, &self.occ, &mut self.rng);
                self.occ.vacate(self.trap, state);
                if let Some(laser) = laser.as_mut() {
                    laser.apply_flip(self.xi.unwrap(), Some(state), None);
                }
                if let (Some(c), Some(p2)) = (self.coll.as_mut(), self.pop2.as_ref()) {
                    c.shell_changed_c1(self.trap.shell(state), self.occ.shell_counts(), p2.shell_counts());
                }
                self.losses.bg1 += 1;
                self.record(EventKind::Bg1 { state });
            } else {
                let p2 = self.pop2.as_mut().unwrap();
                let mut k = self.rng.gen_range(0..p2.n_atoms());
                let mut shell = p2.n_shells() - 1;
                for (e, &c) in p2.shell_counts().iter().enumerate() {
                    if k < c {
                        shell = e;
                        break;
                    }
                    k -= c;
                }
                p2.remove(shell);
                if let Some(c) = self.coll.as_mut() {
                    c.shell_changed_c2(shell, self.occ.shell_counts(), self.pop2.as_ref().unwrap().shell_counts());
                }
                self.losses.bg2 += 1;
                self.record(EventKind::Bg2 { shell: shell as u16 });
            }
            self.n_events += 1;
        }
        self.time = t_end;

        // Pulse-end removal of still-excited atoms: each completed cycle's
        // intermediate decayed at rate 2 gamma R_l; with the undecayed
        // probability the atom never reached its final state and is pumped
        // out instead. Skip entries whose state has since changed hands.
        for (state, undecayed) in pending {
            if !self.occ.is_occupied(state) {
                continue;
            }
            if self.rng.gen::<f64>() < undecayed {
                self.occ.vacate(self.trap, state);
                if let (Some(c), Some(p2)) = (self.coll.as_mut(), self.pop2.as_ref()) {
                    c.shell_changed_c1(self.trap.shell(state), self.occ.shell_counts(), p2.shell_counts());
                }
                self.losses.removed += 1;
                self.n_events += 1;
                self.record(EventKind::Removal { state });
            }
        }
        Ok(())
    }

    fn record(&mut self, kind: EventKind) {
        if let Some(log) = self.events.as_mut() {
            log.push(Event { time: self.time, kind });
        }
    }

    /// Current-state trajectory point. Gamma fields are left NaN for the
    /// caller to fill when a controller ran.
    pub fn sample(&self) -> Sample {
        let (t1, mu1, tf1) = fit_triplet(self.occ.shell_counts(), self.occ.n_atoms());
        let (t2, mu2, tf2) = self
            .pop2
            .as_ref()
            .map_or((f64::NAN, f64::NAN, f64::NAN), |p| {
                fit_triplet(p.shell_counts(), p.n_atoms())
            });
        Sample {
            time: self.time,
            n1: self.occ.n_atoms(),
            n2: self.pop2.as_ref().map_or(0, |p| p.n_atoms()),
            quanta1: self.occ.quanta(),
            quanta2: self.pop2.as_ref().map_or(0, |p| p.quanta()),
            gamma: f64::NAN,
            gamma_n: f64::NAN,
            mean_r: f64::NAN,
            t1,
            mu1,
            t1_over_tf: tf1,
            t2,
            mu2,
            t2_over_tf: tf2,
            shells1: self.occ.shell_counts().to_vec(),
            shells2: self.pop2.as_ref().map_or_else(Vec::new, |p| p.shell_counts().to_vec()),
            losses: self.losses,
        }
    }

    /// Run a full schedule with beam-axis cycling and per-pulse controller
    /// updates, sampling after every pulse. The first sample is the
    /// initial state.
    pub fn run_schedule(&mut self, schedule: &Schedule) -> Result<Vec<Sample>> {
        schedule.validate()?;
        let mut out = vec![self.sample()];
        for stage in &schedule.stages {
            for _ in 0..stage.reps {
                for pulse in &stage.pulses {
                    let beam = Axis::of_pulse(self.pulse_counter);
                    let (run, gamma_n, mean_r) = match (schedule.target, self.xi) {
                        (Some(target), Some(xi)) => {
                            let r = r_factors(self.trap, xi, &self.occ);
                            let upd = gamma_controller_with(
                                self.trap,
                                &self.sxi.as_ref().unwrap()[beam.index()],
                                self.overlap.as_ref().unwrap(),
                                &r,
                                &self.occ,
                                pulse,
                                target,
                            );
                            (pulse.with_gamma(upd.gamma), upd.gamma_n, upd.mean_r)
                        }
                        _ => (*pulse, f64::NAN, f64::NAN),
                    };
                    self.run_pulse(&run, beam)?;
                    let mut s = self.sample();
                    s.gamma = run.gamma;
                    s.gamma_n = gamma_n;
                    s.mean_r = mean_r;
                    out.push(s);
                }
            }
        }
        Ok(out)
    }

    /// Evolve without lasers for `duration`, split into `chunks` equal
    /// holds with a sample after each. The first sample is the initial
    /// state.
    pub fn run_free(&mut self, duration: f64, chunks: usize) -> Result<Vec<Sample>> {
        if !(duration > 0.0) || chunks == 0 {
            return Err(Error::Config(format!(
                "free evolution needs positive duration (got {duration}) and chunks (got {chunks})"
            )));
        }
        let hold = PulseSpec {
            detuning: 0.0,
            rabi_ratio: 0.0,
            gamma: 1.0,
            duration: duration / chunks as f64,
        };
        let mut out = vec![self.sample()];
        for _ in 0..chunks {
            self.run_pulse(&hold, Axis::of_pulse(self.pulse_counter))?;
            out.push(self.sample());
        }
        Ok(out)
    }
}

/// Least-squares thermal fit packaged for trajectory rows; NaN triplet
/// when no fit is possible.
fn fit_triplet(counts: &[u32], n_atoms: u32) -> (f64, f64, f64) {
    if n_atoms == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let fractions: Vec<f64> = counts
        .iter()
        .enumerate()
        .map(|(e, &c)| c as f64 / crate::statespace::shell_degeneracy(e) as f64)
        .collect();
    match fit_fermi_dirac(&fractions, n_atoms as f64) {
        Ok(f) => (f.temperature, f.mu, f.t_over_tf),
        Err(_) => (f64::NAN, f64::NAN, f64::NAN),
    }
}

/// Fermi energy convention used for T/T_F columns derived from a count.
pub fn fermi_energy_of(n_atoms: u32) -> f64 {
    fermi_energy(n_atoms as f64)
}

/// Uniformly random occupied state within shell `e`. Dense shells use
/// rejection; sparse ones index the k-th occupied member directly.
fn pick_occupied_in_shell(trap: &Trap, occ: &Occupancy, rng: &mut ChaCha8Rng, e: usize) -> u32 {
    let range = trap.shell_range(e);
    let count = occ.shell_count(e);
    debug_assert!(count > 0, "no atoms in shell {e}");
    if 4 * count as usize >= range.len() {
        loop {
            let id = rng.gen_range(range.clone());
            if occ.is_occupied(id) {
                return id;
            }
        }
    }
    let mut k = rng.gen_range(0..count);
    for id in range {
        if occ.is_occupied(id) {
            if k == 0 {
                return id;
            }
            k -= 1;
        }
    }
    unreachable!("shell count disagrees with occupancy");
}

/// Uniformly random unoccupied state within shell `e`.
fn pick_hole_in_shell(trap: &Trap, occ: &Occupancy, rng: &mut ChaCha8Rng, e: usize) -> u32 {
    let range = trap.shell_range(e);
    let holes = range.len() as u32 - occ.shell_count(e);
    debug_assert!(holes > 0, "no holes in shell {e}");
    if 4 * holes as usize >= range.len() {
        loop {
            let id = rng.gen_range(range.clone());
            if !occ.is_occupied(id) {
                return id;
            }
        }
    }
    let mut k = rng.gen_range(0..holes);
    for id in range {
        if !occ.is_occupied(id) {
            if k == 0 {
                return id;
            }
            k -= 1;
        }
    }
    unreachable!("hole count disagrees with occupancy");
}

/// Uniformly random occupied state over the whole trap.
fn pick_occupied_any(trap: &Trap, occ: &Occupancy, rng: &mut ChaCha8Rng) -> u32 {
    let n_states = trap.n_states() as u32;
    let count = occ.n_atoms();
    debug_assert!(count > 0);
    if 4 * count >= n_states {
        loop {
            let id = rng.gen_range(0..n_states);
            if occ.is_occupied(id) {
                return id;
            }
        }
    }
    let mut k = rng.gen_range(0..count);
    for id in 0..n_states {
        if occ.is_occupied(id) {
            if k == 0 {
                return id;
            }
            k -= 1;
        }
    }
    unreachable!("atom count disagrees with occupancy");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_elements::emission::EmissionPattern;
    use crate::matrix_elements::utilde::ShellKernelTable;
    use crate::statespace::{thermal_populate, thermal_populate_shells};

    fn small_kernel(e_max: usize) -> UTildeTable {
        UTildeTable::new(ShellKernelTable::build(e_max), 0.3216, None)
    }

    #[test]
    fn empty_schedule_yields_initial_sample_only() {
        let trap = Trap::new(8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let occ = thermal_populate(&trap, 20, 2.0, &mut rng).unwrap();
        let mut engine =
            Engine::new(&trap, None, None, occ, None, 0.0, 7, false).unwrap();
        let samples = engine
            .run_schedule(&Schedule { stages: vec![], target: None })
            .unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].time, 0.0);
        assert_eq!(samples[0].n1, 20);
    }

    #[test]
    fn zero_rates_still_advance_time() {
        let trap = Trap::new(6);
        let occ = Occupancy::empty(&trap);
        let mut engine = Engine::new(&trap, None, None, occ, None, 0.0, 3, true).unwrap();
        let samples = engine.run_free(100.0, 4).unwrap();
        assert_eq!(samples.len(), 5);
        assert_eq!(engine.time(), 100.0);
        assert_eq!(engine.n_events(), 0);
        assert!(engine.take_events().is_empty());
    }

    #[test]
    fn collisions_conserve_atoms_and_quanta_exactly() {
        let trap = Trap::new(14);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let occ = thermal_populate(&trap, 120, 2.5, &mut rng).unwrap();
        let pop2 = thermal_populate_shells(trap.n_shells(), 120, 2.5, &mut rng).unwrap();
        let utilde = small_kernel(trap.e_max());
        let before = occ.quanta() + pop2.quanta();
        let mut engine =
            Engine::new(&trap, None, Some(&utilde), occ, Some(pop2), 0.0, 5, true).unwrap();
        engine.run_free(300.0, 3).unwrap();
        assert!(engine.n_events() > 50, "expected many collisions, got {}", engine.n_events());
        let after = engine.occupancy().quanta() + engine.population2().unwrap().quanta();
        assert_eq!(before, after);
        assert_eq!(engine.occupancy().n_atoms(), 120);
        assert_eq!(engine.population2().unwrap().n_atoms(), 120);
        // Every logged event is a conserving collision.
        for ev in engine.take_events() {
            match ev.kind {
                EventKind::Collision { e1, e2, e3, e4 } => {
                    assert_eq!(e1 as u32 + e2 as u32, e3 as u32 + e4 as u32)
                }
                other => panic!("unexpected event {other:?}"),
            }
        }
    }

    #[test]
    fn background_losses_hit_both_components() {
        let trap = Trap::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let occ = thermal_populate(&trap, 80, 2.0, &mut rng).unwrap();
        let pop2 = thermal_populate_shells(trap.n_shells(), 80, 2.0, &mut rng).unwrap();
        let utilde = small_kernel(trap.e_max());
        // Expected survival over the hold: exp(-0.02 * 20) ~ 0.67.
        let mut engine =
            Engine::new(&trap, None, Some(&utilde), occ, Some(pop2), 0.02, 9, false).unwrap();
        engine.run_free(20.0, 1).unwrap();
        let l = engine.losses();
        assert!(l.bg1 > 5 && l.bg2 > 5, "losses {l:?}");
        assert_eq!(engine.occupancy().n_atoms(), 80 - l.bg1 as u32);
        assert_eq!(engine.population2().unwrap().n_atoms(), 80 - l.bg2 as u32);
    }

    #[test]
    fn identical_seeds_reproduce_trajectories() {
        let trap = Trap::new(10);
        let xi = XiTable::build(&trap, 2.0, EmissionPattern::Isotropic);
        let stage = Stage {
            pulses: [
                PulseSpec { detuning: -3.0, rabi_ratio: 0.1, gamma: 0.6, duration: 60.0 },
                PulseSpec { detuning: -4.0, rabi_ratio: 0.1, gamma: 0.6, duration: 60.0 },
            ],
            reps: 3,
        };
        let schedule = Schedule { stages: vec![stage], target: Some(0.8) };
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(33);
            let occ = thermal_populate(&trap, 50, 2.0, &mut rng).unwrap();
            let mut engine =
                Engine::new(&trap, Some(&xi), None, occ, None, 1e-4, seed, true).unwrap();
            let samples = engine.run_schedule(&schedule).unwrap();
            (samples, engine.take_events(), engine.occupancy().shell_counts().to_vec())
        };
        let (s1, e1, c1) = run(42);
        let (s2, e2, c2) = run(42);
        assert_eq!(c1, c2);
        assert_eq!(e1.len(), e2.len());
        for (a, b) in e1.iter().zip(&e2) {
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.time.to_bits(), b.time.to_bits());
        }
        for (a, b) in s1.iter().zip(&s2) {
            assert_eq!(a.time.to_bits(), b.time.to_bits());
            assert_eq!(a.n1, b.n1);
            assert_eq!(a.shells1, b.shells1);
        }
        let (s3, _, _) = run(43);
        let drifted = s1
            .iter()
            .zip(&s3)
            .any(|(a, b)| a.shells1 != b.shells1 || a.time.to_bits() != b.time.to_bits());
        assert!(drifted, "different seeds gave identical runs");
    }

    #[test]
    fn weak_decay_removes_excited_atoms_at_pulse_end() {
        let trap = Trap::new(10);
        let xi = XiTable::build(&trap, 2.0, EmissionPattern::Isotropic);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let occ = thermal_populate(&trap, 60, 2.0, &mut rng).unwrap();
        // gamma so small that almost no intermediate decays within the
        // pulse: nearly every atom that completes a cycle is removed. The
        // drive stays strong (rabi_ratio 50 keeps Omega finite as gamma
        // shrinks) and the pulse short enough that re-excitation is rare.
        let pulse = PulseSpec { detuning: -1.0, rabi_ratio: 50.0, gamma: 0.002, duration: 10.0 };
        let mut engine =
            Engine::new(&trap, Some(&xi), None, occ, None, 0.0, 13, true).unwrap();
        engine.run_pulse(&pulse, Axis::X).unwrap();
        let events = engine.take_events();
        let cycles = events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Laser { .. }))
            .count() as u64;
        let removals = engine.losses().removed;
        assert!(cycles > 5, "too few cycles ({cycles}) to test removal");
        assert!(
            removals * 2 >= cycles && removals > 5,
            "expected most of {cycles} excited atoms removed, got {removals}"
        );
        assert_eq!(engine.occupancy().n_atoms() as u64, 60 - removals);
    }

    #[test]
    fn cooling_pulse_lowers_energy() {
        // eta = 1 keeps the recoil per emission (eta^2 quanta on average)
        // below the 3 quanta each resonant absorption removes.
        let trap = Trap::new(12);
        let xi = XiTable::build(&trap, 1.0, EmissionPattern::Isotropic);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let occ = thermal_populate(&trap, 40, 3.0, &mut rng).unwrap();
        let q0 = occ.quanta() as f64 / 40.0;
        let stage = Stage {
            pulses: [
                PulseSpec { detuning: -3.0, rabi_ratio: 0.25, gamma: 0.5, duration: 150.0 },
                PulseSpec { detuning: -4.0, rabi_ratio: 0.25, gamma: 0.5, duration: 150.0 },
            ],
            reps: 6,
        };
        let mut engine =
            Engine::new(&trap, Some(&xi), None, occ, None, 0.0, 21, false).unwrap();
        let samples = engine
            .run_schedule(&Schedule { stages: vec![stage], target: Some(0.8) })
            .unwrap();
        let last = samples.last().unwrap();
        let q1 = last.quanta1 as f64 / last.n1 as f64;
        assert!(
            q1 < q0 - 0.7,
            "mean quanta did not drop: {q0:.2} -> {q1:.2} (n={})",
            last.n1
        );
        // Controller stayed engaged: the suppressed rate obeys festina
        // lente even when gamma itself runs above omega.
        assert!(last.gamma > 0.0 && last.gamma * last.mean_r <= 1.05);
        assert!(last.gamma_n.is_finite());
    }
}
