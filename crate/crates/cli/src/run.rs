//! Assembles tables and engines from a resolved config, executes the run
//! (both storage arms when asked), and writes every artifact.

use crate::config::{echo, RunConfig};
use crate::output::{self, ArmReport};
use anyhow::{Context, Result};
use fermicool_core::error::Error as CoreError;
use fermicool_core::kinetics::Engine;
use fermicool_core::matrix_elements::displacement::OverlapBlock;
use fermicool_core::matrix_elements::utilde::{ShellKernelTable, UTildeTable};
use fermicool_core::matrix_elements::xi_table::XiTable;
use fermicool_core::presets::StoreArm;
use fermicool_core::statespace::{thermal_populate, thermal_populate_shells, Trap};
use fermicool_core::thermo::ShellStats;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

/// Engine streams must not collide with the populate stream, and the two
/// storage arms must not collide with each other; arms get fixed salts so
/// a single-arm rerun reproduces its half of a both-arm run.
const ENGINE_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn execute(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.txt"), echo(cfg)).context("writing config echo")?;
    fs::create_dir_all(&cfg.cache_dir)
        .with_context(|| format!("creating {}", cfg.cache_dir.display()))?;

    if cfg.preset == "tables" {
        return dump_tables(cfg, out);
    }

    let started = Instant::now();
    let exp = &cfg.exp;
    let trap = exp.spec.trap();

    // Which arms run: the storage preset splits into lasers-off/on, every
    // other preset is a single unnamed arm.
    let arms: Vec<(&'static str, bool, u64)> = if exp.name == "store" {
        match exp.arm {
            StoreArm::Both => vec![("off", false, 0), ("on", true, 1)],
            StoreArm::Off => vec![("off", false, 0)],
            StoreArm::On => vec![("on", true, 1)],
        }
    } else {
        vec![("", exp.has_lasers(), 0)]
    };

    let needs_lasers = arms.iter().any(|&(_, lasers, _)| lasers);
    let xi = if needs_lasers {
        Some(
            XiTable::cached(&trap, exp.spec.lamb_dicke, exp.pattern, &cfg.cache_dir)
                .context("building emission tables")?,
        )
    } else {
        None
    };
    let utilde = if exp.two_component() {
        let kernel = ShellKernelTable::cached(trap.e_max(), &cfg.cache_dir)
            .context("building collision kernel")?;
        Some(UTildeTable::new(kernel, exp.spec.u0(), None))
    } else {
        None
    };

    // One populate stream: both arms start from the identical gas.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t0 = exp.t_init();
    let occ0 = thermal_populate(&trap, exp.n1, t0, &mut rng).map_err(fault(out, "populate"))?;
    let pop0 = if exp.two_component() {
        Some(
            thermal_populate_shells(trap.n_shells(), exp.n2, t0, &mut rng)
                .map_err(fault(out, "populate"))?,
        )
    } else {
        None
    };

    let mut reports = Vec::new();
    for &(arm, lasers, salt) in &arms {
        let suffix = if arm.is_empty() { String::new() } else { format!("_{arm}") };
        let mut engine = Engine::new(
            &trap,
            if lasers { xi.as_ref() } else { None },
            utilde.as_ref(),
            occ0.clone(),
            pop0.clone(),
            exp.spec.gamma_bg_trap(),
            cfg.seed ^ ENGINE_SALT ^ salt,
            cfg.events,
        )
        .map_err(fault(out, "engine setup"))?;

        let samples = if lasers {
            engine.run_schedule(&exp.schedule)
        } else {
            engine.run_free(
                exp.spec.trap_time(exp.free_seconds),
                exp.free_chunks.max(1),
            )
        }
        .map_err(fault(out, arm))?;

        // Steady-window statistics: the settled second half of the last
        // stage of a protocol, or of a free hold.
        let window = if lasers {
            (exp.schedule.stages.last().map_or(0, |s| s.reps) as usize).min(samples.len() - 1)
        } else {
            samples.len() / 2
        };
        let tail = &samples[samples.len() - window.max(1)..];
        let mut stats1 = ShellStats::new(trap.n_shells(), tail[0].time);
        let mut stats2 = ShellStats::new(trap.n_shells(), tail[0].time);
        for s in tail {
            stats1.record(&s.shells1, s.time);
            if !s.shells2.is_empty() {
                stats2.record(&s.shells2, s.time);
            }
        }

        output::write_trajectory(
            &out.join(format!("trajectory{suffix}.tsv")),
            &exp.spec,
            &samples,
            exp.n1,
            exp.n2,
        )?;
        output::write_shells(&out.join(format!("shells1{suffix}.tsv")), &stats1)?;
        if stats2.samples() > 0 {
            output::write_shells(&out.join(format!("shells2{suffix}.tsv")), &stats2)?;
        }
        if cfg.events {
            output::write_events(
                &out.join(format!("events{suffix}.tsv")),
                &exp.spec,
                &engine.take_events(),
            )?;
        }
        reports.push(ArmReport {
            arm,
            final_sample: samples.last().expect("runs always sample").clone(),
            losses: engine.losses(),
            n_events: engine.n_events(),
            n_nulls: engine.n_nulls(),
        });
    }

    output::write_summary(
        &out.join("summary.txt"),
        &cfg.preset,
        cfg.seed,
        &exp.spec,
        &reports,
        started.elapsed().as_secs_f64(),
    )?;
    Ok(())
}

/// Wrap a core error, writing the diagnostic file next to the artifacts.
fn fault<'a>(out: &'a Path, context: &'a str) -> impl Fn(CoreError) -> anyhow::Error + 'a {
    move |e| {
        let _ = output::write_diagnostic(out, context, &e);
        anyhow::Error::new(e)
    }
}

/// Table inspection dump, capped to a small trap so entries stay
/// reviewable and stable for regression pinning.
fn dump_tables(cfg: &RunConfig, out: &Path) -> Result<()> {
    let exp = &cfg.exp;
    let shells = exp.spec.n_shells.min(16);
    let trap = Trap::new(shells);
    let xi = XiTable::build(&trap, exp.spec.lamb_dicke, exp.pattern);
    let fc = OverlapBlock::build(12, 12, exp.spec.lamb_dicke);
    let kernel_shells = shells.min(8);
    let utilde = UTildeTable::new(ShellKernelTable::build(kernel_shells - 1), exp.spec.u0(), None);

    let mut s = String::new();
    let _ = writeln!(s, "# {}", output::TABLES_SCHEMA);
    let _ = writeln!(
        s,
        "# trap capped at {shells} shells (kernel at {kernel_shells}) for inspection; eta = {}",
        exp.spec.lamb_dicke
    );
    let _ = writeln!(s, "table\ti1\ti2\ti3\ti4\tvalue\tmethod");
    for l in 0..trap.shell_range(3.min(shells - 1)).end {
        for (m, v) in xi.row(l) {
            let _ = writeln!(s, "xi\t{l}\t{m}\t-1\t-1\t{v:.8e}\tfolded-window");
        }
    }
    for a in 0..=12usize {
        for b in 0..=12usize {
            let _ = writeln!(s, "fc\t{a}\t{b}\t-1\t-1\t{:.8e}\trecurrence", fc.sq(a, b));
        }
    }
    for e1 in 0..kernel_shells {
        for e2 in 0..kernel_shells {
            for e3 in 0..kernel_shells {
                let sum = e1 + e2;
                if e3 > sum {
                    continue;
                }
                let e4 = sum - e3;
                if e4 >= kernel_shells {
                    continue;
                }
                let e = [e1, e2, e3, e4];
                let _ = writeln!(
                    s,
                    "utilde\t{e1}\t{e2}\t{e3}\t{e4}\t{:.8e}\t{}",
                    utilde.average(e),
                    utilde.method(e).tag()
                );
            }
        }
    }
    fs::write(out.join("tables.tsv"), s).context("writing tables.tsv")?;
    Ok(())
}
