//! Command line driver: each subcommand is a built-in experiment, modified
//! by an optional config file and flags. Exit codes: 0 success, 2 usage or
//! configuration problems, 3 engine fault (diagnostic file written).

mod config;
mod output;
mod run;

use clap::Parser;
use fermicool_core::error::Error as CoreError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "fermicool",
    about = "Raman sideband cooling of trapped Fermi gases, one event at a time",
    version
)]
struct Cli {
    /// Experiment preset: cool1c, cool2c, thermalize, store, or tables.
    command: String,

    /// Config file overriding preset keys (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Random seed; identical seeds give byte-identical outputs.
    #[arg(long)]
    seed: Option<u64>,

    /// Reduced-scale factor in (0, 1]: shells and atoms shrink together.
    #[arg(long)]
    scale: Option<f64>,

    /// Output directory (default out-<preset>).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Write the full event log alongside the trajectory.
    #[arg(long)]
    events: bool,

    /// Print the resolved configuration and exit without running.
    #[arg(long)]
    preset_dump: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let file_pairs = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match config::parse(&text) {
                Ok(pairs) => pairs,
                Err(e) => {
                    eprintln!("fermicool: {}: {e:#}", path.display());
                    return ExitCode::from(2);
                }
            },
            Err(e) => {
                eprintln!("fermicool: reading {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => Vec::new(),
    };

    let cfg = match config::resolve(&cli.command, &file_pairs, cli.scale, cli.seed, cli.events) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("fermicool: {e:#}");
            return ExitCode::from(2);
        }
    };

    if cli.preset_dump {
        print!("{}", config::echo(&cfg));
        return ExitCode::SUCCESS;
    }

    let out = cli.out.unwrap_or_else(|| PathBuf::from(format!("out-{}", cfg.preset)));
    match run::execute(&cfg, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fermicool: {e:#}");
            let engine_fault = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<CoreError>(), Some(CoreError::Engine(_))));
            ExitCode::from(if engine_fault { 3 } else { 2 })
        }
    }
}
