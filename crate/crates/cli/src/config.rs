//! Flat key = value configuration with dotted sections.
//!
//! A run is resolved in layers: the named preset (at the requested scale)
//! supplies every physical parameter, an optional config file overrides
//! individual keys, and command-line flags override both. The resolved
//! configuration is echoed into the output directory in the same format,
//! with floats printed exactly, so re-running from the echo reproduces the
//! run bit for bit.

use anyhow::{anyhow, bail, Context, Result};
use fermicool_core::kinetics::Stage;
use fermicool_core::presets::{preset, Experiment, StoreArm};
use fermicool_core::rates::PulseSpec;
use std::fmt::Write as _;
use std::path::PathBuf;

const BOHR: f64 = 5.29177210903e-11;
pub const CONFIG_SCHEMA: &str = "fermicool config v1";

/// Everything a run needs beyond the physics: identity, seed, outputs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub preset: String,
    pub scale: f64,
    pub seed: u64,
    pub events: bool,
    pub cache_dir: PathBuf,
    pub exp: Experiment,
}

/// Parse config text into ordered (key, value) pairs. Blank lines and
/// `#` comments are skipped; keys may repeat (last wins on apply).
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value, got {raw:?}", i + 1))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().with_context(|| format!("{key}: not a number: {v:?}"))
}

fn parse_pair(key: &str, v: &str) -> Result<[f64; 2]> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| anyhow!("{key}: expected two comma-separated numbers, got {v:?}"))?;
    Ok([parse_f64(key, a.trim())?, parse_f64(key, b.trim())?])
}

/// Build the resolved config: preset at `scale`, then file overrides.
/// `cli_seed`/`cli_events` come from flags and land after the file.
pub fn resolve(
    command: &str,
    file_pairs: &[(String, String)],
    cli_scale: Option<f64>,
    cli_seed: Option<u64>,
    cli_events: bool,
) -> Result<RunConfig> {
    // Scale must be known before the preset is built: flag, then file.
    let file_scale = file_pairs
        .iter()
        .rev()
        .find(|(k, _)| k == "scale")
        .map(|(k, v)| parse_f64(k, v))
        .transpose()?;
    let scale = cli_scale.or(file_scale).unwrap_or(1.0);

    let mut cfg = RunConfig {
        preset: command.to_string(),
        scale,
        seed: 1,
        events: false,
        cache_dir: PathBuf::from("fermicool-cache"),
        exp: preset(command, scale)?,
    };

    // Stages touched by overrides are validated for completeness at the end.
    let placeholder = PulseSpec { detuning: f64::NAN, rabi_ratio: f64::NAN, gamma: f64::NAN, duration: f64::NAN };
    for (key, value) in file_pairs {
        let exp = &mut cfg.exp;
        match key.as_str() {
            "scale" => {} // consumed above
            "preset" => {
                if value != command {
                    bail!("config is for preset {value:?} but the command is {command:?}");
                }
            }
            "seed" => cfg.seed = value.parse().with_context(|| format!("seed: {value:?}"))?,
            "trap.omega_hz" => {
                exp.spec.omega = 2.0 * std::f64::consts::PI * parse_f64(key, value)?
            }
            "trap.n_shells" => exp.spec.n_shells = value.parse().with_context(|| format!("{key}: {value:?}"))?,
            "trap.eta" => exp.spec.lamb_dicke = parse_f64(key, value)?,
            "trap.a_scatter_bohr" => exp.spec.a_scatter = BOHR * parse_f64(key, value)?,
            "trap.mass_kg" => exp.spec.mass = parse_f64(key, value)?,
            "trap.wavelength_nm" => exp.spec.wavelength = 1e-9 * parse_f64(key, value)?,
            "trap.gamma_bg_hz" => exp.spec.gamma_bg = parse_f64(key, value)?,
            "species.n1" => exp.n1 = value.parse().with_context(|| format!("{key}: {value:?}"))?,
            "species.n2" => exp.n2 = value.parse().with_context(|| format!("{key}: {value:?}"))?,
            "species.t_init_tf" => exp.t_init_tf = parse_f64(key, value)?,
            "schedule.target" => {
                exp.schedule.target =
                    if value == "none" { None } else { Some(parse_f64(key, value)?) }
            }
            "schedule.stages" => {
                let n: usize = value.parse().with_context(|| format!("{key}: {value:?}"))?;
                exp.schedule.stages.resize(n, Stage { pulses: [placeholder; 2], reps: 0 });
            }
            "run.free_seconds" => exp.free_seconds = parse_f64(key, value)?,
            "run.free_chunks" => exp.free_chunks = value.parse().with_context(|| format!("{key}: {value:?}"))?,
            "store.lasers" => exp.arm = StoreArm::parse(value)?,
            "output.events" => {
                cfg.events = value.parse().with_context(|| format!("{key}: {value:?}"))?
            }
            "output.cache_dir" => cfg.cache_dir = PathBuf::from(value),
            _ => {
                let Some(rest) = key.strip_prefix("schedule.stage") else {
                    bail!("unknown config key {key:?}");
                };
                let (idx, field) = rest
                    .split_once('.')
                    .ok_or_else(|| anyhow!("unknown config key {key:?}"))?;
                let i: usize = idx.parse().with_context(|| format!("{key}: bad stage index"))?;
                let stage = exp
                    .schedule
                    .stages
                    .get_mut(i.wrapping_sub(1))
                    .ok_or_else(|| anyhow!("{key}: stage {i} out of range (set schedule.stages first)"))?;
                match field {
                    "detunings" => {
                        let v = parse_pair(key, value)?;
                        stage.pulses[0].detuning = v[0];
                        stage.pulses[1].detuning = v[1];
                    }
                    "rabi" => {
                        let v = parse_pair(key, value)?;
                        stage.pulses[0].rabi_ratio = v[0];
                        stage.pulses[1].rabi_ratio = v[1];
                    }
                    "gammas" => {
                        let v = parse_pair(key, value)?;
                        stage.pulses[0].gamma = v[0];
                        stage.pulses[1].gamma = v[1];
                    }
                    "durations" => {
                        let v = parse_pair(key, value)?;
                        stage.pulses[0].duration = v[0];
                        stage.pulses[1].duration = v[1];
                    }
                    "reps" => {
                        stage.reps = value.parse().with_context(|| format!("{key}: {value:?}"))?
                    }
                    _ => bail!("unknown config key {key:?}"),
                }
            }
        }
    }
    if let Some(seed) = cli_seed {
        cfg.seed = seed;
    }
    if cli_events {
        cfg.events = true;
    }

    for (i, stage) in cfg.exp.schedule.stages.iter().enumerate() {
        for p in &stage.pulses {
            if p.detuning.is_nan() || p.rabi_ratio.is_nan() || p.gamma.is_nan() || p.duration.is_nan() {
                bail!(
                    "schedule.stage{} is incomplete: set detunings, rabi, gammas, durations, reps",
                    i + 1
                );
            }
        }
    }
    cfg.exp.spec.validate()?;
    Ok(cfg)
}

/// Exact float text: shortest representation that parses back bit-equal.
fn f(x: f64) -> String {
    format!("{x:e}")
}

/// Serialize the resolved configuration. Every physical key is written
/// explicitly, so the echo stands alone even if preset defaults change.
pub fn echo(cfg: &RunConfig) -> String {
    let e = &cfg.exp;
    let mut s = String::new();
    let _ = writeln!(s, "# {CONFIG_SCHEMA}");
    let _ = writeln!(s, "preset = {}", cfg.preset);
    let _ = writeln!(s, "scale = {}", f(cfg.scale));
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "trap.omega_hz = {}", f(e.spec.omega / (2.0 * std::f64::consts::PI)));
    let _ = writeln!(s, "trap.n_shells = {}", e.spec.n_shells);
    let _ = writeln!(s, "trap.eta = {}", f(e.spec.lamb_dicke));
    let _ = writeln!(s, "trap.a_scatter_bohr = {}", f(e.spec.a_scatter / BOHR));
    let _ = writeln!(s, "trap.mass_kg = {}", f(e.spec.mass));
    let _ = writeln!(s, "trap.wavelength_nm = {}", f(e.spec.wavelength * 1e9));
    let _ = writeln!(s, "trap.gamma_bg_hz = {}", f(e.spec.gamma_bg));
    let _ = writeln!(s, "species.n1 = {}", e.n1);
    let _ = writeln!(s, "species.n2 = {}", e.n2);
    let _ = writeln!(s, "species.t_init_tf = {}", f(e.t_init_tf));
    match e.schedule.target {
        Some(t) => drop(writeln!(s, "schedule.target = {}", f(t))),
        None => drop(writeln!(s, "schedule.target = none")),
    }
    let _ = writeln!(s, "schedule.stages = {}", e.schedule.stages.len());
    for (i, stage) in e.schedule.stages.iter().enumerate() {
        let n = i + 1;
        let [a, b] = &stage.pulses;
        let _ = writeln!(s, "schedule.stage{n}.detunings = {},{}", f(a.detuning), f(b.detuning));
        let _ = writeln!(s, "schedule.stage{n}.rabi = {},{}", f(a.rabi_ratio), f(b.rabi_ratio));
        let _ = writeln!(s, "schedule.stage{n}.gammas = {},{}", f(a.gamma), f(b.gamma));
        let _ = writeln!(s, "schedule.stage{n}.durations = {},{}", f(a.duration), f(b.duration));
        let _ = writeln!(s, "schedule.stage{n}.reps = {}", stage.reps);
    }
    let _ = writeln!(s, "run.free_seconds = {}", f(e.free_seconds));
    let _ = writeln!(s, "run.free_chunks = {}", e.free_chunks);
    let _ = writeln!(s, "store.lasers = {}", e.arm.name());
    let _ = writeln!(s, "output.events = {}", cfg.events);
    let _ = writeln!(s, "output.cache_dir = {}", cfg.cache_dir.display());
    s
}

/// True when two experiments describe the identical run.
#[cfg(test)]
fn same_experiment(a: &Experiment, b: &Experiment) -> bool {
    use fermicool_core::kinetics::Schedule;
    let same_schedule = |x: &Schedule, y: &Schedule| {
        x.target == y.target
            && x.stages.len() == y.stages.len()
            && x.stages.iter().zip(&y.stages).all(|(s, t)| {
                s.reps == t.reps
                    && s.pulses.iter().zip(&t.pulses).all(|(p, q)| {
                        p.detuning == q.detuning
                            && p.rabi_ratio == q.rabi_ratio
                            && p.gamma == q.gamma
                            && p.duration == q.duration
                    })
            })
    };
    a.spec.omega == b.spec.omega
        && a.spec.n_shells == b.spec.n_shells
        && a.spec.lamb_dicke == b.spec.lamb_dicke
        && a.spec.a_scatter == b.spec.a_scatter
        && a.spec.mass == b.spec.mass
        && a.spec.wavelength == b.spec.wavelength
        && a.spec.gamma_bg == b.spec.gamma_bg
        && a.n1 == b.n1
        && a.n2 == b.n2
        && a.t_init_tf == b.t_init_tf
        && same_schedule(&a.schedule, &b.schedule)
        && a.free_seconds == b.free_seconds
        && a.free_chunks == b.free_chunks
        && a.arm == b.arm
}
