//! Output artifacts: tab-delimited files with header rows, one schema
//! stamp per file, numerics at nine significant digits, times in both
//! trap units and seconds.

use anyhow::{Context, Result};
use fermicool_core::kinetics::{Event, EventKind, LossCounts, Sample};
use fermicool_core::statespace::{fermi_energy, shell_degeneracy, TrapSpec};
use fermicool_core::thermo::{fit_fermi_dirac, thermal_mean_curve, thermal_variance_curve, ShellStats};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub const TRAJECTORY_SCHEMA: &str = "fermicool trajectory v1";
pub const SHELLS_SCHEMA: &str = "fermicool shells v1";
pub const SUMMARY_SCHEMA: &str = "fermicool summary v1";
pub const EVENTS_SCHEMA: &str = "fermicool events v1";
pub const TABLES_SCHEMA: &str = "fermicool tables v1";

/// Nine significant digits, NaN spelled out.
fn g(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.8e}")
    }
}

pub fn write_trajectory(
    path: &Path,
    spec: &TrapSpec,
    samples: &[Sample],
    n1_init: usize,
    n2_init: usize,
) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# {TRAJECTORY_SCHEMA}");
    let _ = writeln!(s, "# t in 1/omega, t_s in seconds; temperatures and mu in hbar omega");
    let _ = writeln!(s, "# *_tf_now uses T_F of the current atom number, *_tf_init of the initial");
    let _ = writeln!(
        s,
        "t\tt_s\tn1\tn2\tt1\tmu1\tt1_tf_now\tt1_tf_init\tt2\tmu2\tt2_tf_now\tt2_tf_init\tgamma\tgamma_n"
    );
    let tf1_init = fermi_energy(n1_init as f64);
    let tf2_init = fermi_energy(n2_init as f64);
    for p in samples {
        let row = [
            g(p.time),
            g(spec.seconds(p.time)),
            p.n1.to_string(),
            p.n2.to_string(),
            g(p.t1),
            g(p.mu1),
            g(p.t1_over_tf),
            g(p.t1 / tf1_init),
            g(p.t2),
            g(p.mu2),
            g(p.t2_over_tf),
            g(p.t2 / tf2_init),
            g(p.gamma),
            g(p.gamma_n),
        ];
        let _ = writeln!(s, "{}", row.join("\t"));
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

/// Shell occupation statistics over a sampling window, with the thermal
/// curves of a Fermi-Dirac fit to the mean occupation alongside.
pub fn write_shells(path: &Path, stats: &ShellStats) -> Result<()> {
    let n_shells = stats.n_shells();
    let fractions = stats.fractions();
    let fit = fit_fermi_dirac(&fractions, stats.mean_atoms()).ok();
    let (t_mean, t_var) = match &fit {
        Some(f) => (thermal_mean_curve(f, n_shells), thermal_variance_curve(f, n_shells)),
        None => (vec![f64::NAN; n_shells], vec![f64::NAN; n_shells]),
    };
    let mut s = String::new();
    let _ = writeln!(s, "# {SHELLS_SCHEMA}");
    let (t0, t1) = stats.window();
    let _ = writeln!(
        s,
        "# window [{}, {}] trap units, {} samples; thermal curves from a Fermi-Dirac fit of the means",
        g(t0),
        g(t1),
        stats.samples()
    );
    match &fit {
        Some(f) => {
            let _ = writeln!(
                s,
                "# fit: T = {} hbar omega, mu = {} hbar omega, T/T_F = {}",
                g(f.temperature),
                g(f.mu),
                g(f.t_over_tf)
            );
        }
        None => {
            let _ = writeln!(s, "# fit: none");
        }
    }
    let _ = writeln!(s, "e\tg\tmean\tvariance\tthermal_mean\tthermal_variance");
    for e in 0..n_shells {
        let _ = writeln!(
            s,
            "{e}\t{}\t{}\t{}\t{}\t{}",
            shell_degeneracy(e),
            g(stats.mean(e)),
            g(stats.variance(e)),
            g(t_mean[e]),
            g(t_var[e]),
        );
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub struct ArmReport {
    pub arm: &'static str,
    pub final_sample: Sample,
    pub losses: LossCounts,
    pub n_events: u64,
    pub n_nulls: u64,
}

pub fn write_summary(
    path: &Path,
    preset: &str,
    seed: u64,
    spec: &TrapSpec,
    arms: &[ArmReport],
    wall_seconds: f64,
) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# {SUMMARY_SCHEMA}");
    let _ = writeln!(s, "preset = {preset}");
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "omega_hz = {}", g(spec.omega / (2.0 * std::f64::consts::PI)));
    for r in arms {
        let p = if r.arm.is_empty() { String::new() } else { format!("{}.", r.arm) };
        let fs_ = &r.final_sample;
        let _ = writeln!(s, "{p}t_final = {}", g(fs_.time));
        let _ = writeln!(s, "{p}t_final_s = {}", g(spec.seconds(fs_.time)));
        let _ = writeln!(s, "{p}n1_final = {}", fs_.n1);
        let _ = writeln!(s, "{p}n2_final = {}", fs_.n2);
        let _ = writeln!(s, "{p}t1_tf_final = {}", g(fs_.t1_over_tf));
        let _ = writeln!(s, "{p}t2_tf_final = {}", g(fs_.t2_over_tf));
        let _ = writeln!(s, "{p}loss_bg1 = {}", r.losses.bg1);
        let _ = writeln!(s, "{p}loss_bg2 = {}", r.losses.bg2);
        let _ = writeln!(s, "{p}loss_removed = {}", r.losses.removed);
        let _ = writeln!(s, "{p}events = {}", r.n_events);
        let _ = writeln!(s, "{p}null_events = {}", r.n_nulls);
    }
    let _ = writeln!(s, "wall_seconds = {}", g(wall_seconds));
    let _ = writeln!(s, "status = ok");
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn write_events(path: &Path, spec: &TrapSpec, events: &[Event]) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# {EVENTS_SCHEMA}");
    let _ = writeln!(s, "# laser: a=from b=to; coll: a..d = shells e1 e2 e3 e4;");
    let _ = writeln!(s, "# bg1/removal: a=state; bg2: a=shell");
    let _ = writeln!(s, "t\tt_s\tkind\ta\tb\tc\td");
    for ev in events {
        let (kind, cols) = match ev.kind {
            EventKind::Laser { from, to } => ("laser", [from as i64, to as i64, -1, -1]),
            EventKind::Collision { e1, e2, e3, e4 } => {
                ("coll", [e1 as i64, e2 as i64, e3 as i64, e4 as i64])
            }
            EventKind::Bg1 { state } => ("bg1", [state as i64, -1, -1, -1]),
            EventKind::Bg2 { shell } => ("bg2", [shell as i64, -1, -1, -1]),
            EventKind::Removal { state } => ("removal", [state as i64, -1, -1, -1]),
        };
        let _ = writeln!(
            s,
            "{}\t{}\t{kind}\t{}\t{}\t{}\t{}",
            g(ev.time),
            g(spec.seconds(ev.time)),
            cols[0],
            cols[1],
            cols[2],
            cols[3]
        );
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn write_diagnostic(dir: &Path, context: &str, err: &dyn std::fmt::Display) -> Result<()> {
    let path = dir.join("diagnostic.txt");
    let body = format!("# fermicool diagnostic v1\ncontext = {context}\nerror = {err}\n");
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}
