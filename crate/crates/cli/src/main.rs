//! `quantlat`: simulate data, train, evaluate, and run the unconditional
//! quantile estimation study from a TOML run configuration.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::LoadedConfig;
use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "quantlat", version, about = "Quantile regression with monotonic lattice models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configuration's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configuration's `out` directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated train, validation and test CSVs with sidecars.
    Simulate(Common),
    /// Train a model (one per grid point) and keep the best.
    Train(Common),
    /// Evaluate a saved model on the configured data.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model file; defaults to `<out>/model.json`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare unconditional quantile estimators on repeated small samples.
    Uqe(Common),
}

fn load(c: &Common) -> CliResult<LoadedConfig> {
    LoadedConfig::from_path(&c.config, c.seed, c.out.as_deref())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(&load(&c)?),
        Command::Train(c) => commands::train(&load(&c)?),
        Command::Eval { common, model } => commands::eval(&load(&common)?, model.as_deref()),
        Command::Uqe(c) => commands::uqe(&load(&c)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
