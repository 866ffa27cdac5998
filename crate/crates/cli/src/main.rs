//! `ctvio`: simulate, optimize and evaluate continuous-time visual-inertial
//! trajectories.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure, 4 I/O error.

mod error;
mod optimize;
mod simulate;
mod tools;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::{load_config, CliResult};

#[derive(Debug, Parser)]
#[command(name = "ctvio", version, about = "Continuous-time visual-inertial odometry on a known map")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        /// `key = value` simulator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// points | lines; overrides the config preset.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Estimate the trajectory and model parameters of a dataset.
    Optimize(optimize::OptimizeArgs),
    /// Align an estimate to ground truth and report its errors.
    Evaluate(tools::EvaluateArgs),
    /// Fit a spline to timestamped poses.
    Fit(tools::FitArgs),
    /// Summarize a dataset directory.
    Inspect(tools::InspectArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            preset,
        } => {
            let mut kv = match &config {
                Some(p) => load_config(p)?,
                None => ctvio::io::KeyValues::new(),
            };
            if let Some(s) = seed {
                kv.push("seed", s.to_string());
            }
            if let Some(p) = preset {
                kv.push("preset", p);
            }
            let c = simulate::sim_config(&kv)?;
            simulate::run(&c, &out)
        }
        Command::Optimize(args) => optimize::run(&args),
        Command::Evaluate(args) => tools::evaluate(&args),
        Command::Fit(args) => tools::fit(&args),
        Command::Inspect(args) => tools::inspect(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
