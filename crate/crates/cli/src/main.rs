//! `phdae`: batch runner for sampled-data pendulum experiments.
//!
//! Exit codes: 0 success, 1 output i/o error, 2 configuration error,
//! 3 solver failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod run;
mod tables;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{parse_config, Experiment, RunConfig};
use crate::run::RunError;

#[derive(Parser)]
#[command(
    name = "phdae",
    version,
    about = "Structure-preserving sampled-data simulation of the double pendulum"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Io {
    /// Configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] path`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and write trajectory.csv and report.txt.
    Simulate(Io),
    /// Observed convergence order against a reference solution.
    OrderStudy(Io),
    /// Energy deviation and drift of unforced runs.
    EnergyStudy(Io),
    /// Forward/backward roundtrip error.
    SymmetryCheck(Io),
    /// Energy monotonicity under the configured control.
    DissipationCheck(Io),
    /// Parse and check the configuration only.
    ValidateConfig(Io),
}

fn load(path: &Path) -> Result<RunConfig, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        RunError::Config(config::ConfigError {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cfg = parse_config(&text, base)?;
    if cfg.output.is_relative() {
        cfg.output = base.join(&cfg.output);
    }
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<String, RunError> {
    let (mode, io) = match command {
        Command::Simulate(io) => (Some(Experiment::Simulate), io),
        Command::OrderStudy(io) => (Some(Experiment::OrderStudy), io),
        Command::EnergyStudy(io) => (Some(Experiment::EnergyStudy), io),
        Command::SymmetryCheck(io) => (Some(Experiment::SymmetryCheck), io),
        Command::DissipationCheck(io) => (Some(Experiment::DissipationCheck), io),
        Command::ValidateConfig(io) => (None, io),
    };
    let cfg = load(&io.config)?;
    let out = io.out.unwrap_or_else(|| cfg.output.clone());
    match mode {
        Some(mode) => run::run(mode, &cfg, &out),
        None => {
            if let Some(declared) = cfg.mode {
                cfg.check_mode(declared)?;
            }
            Ok(format!("{}: ok\n", io.config.display()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("phdae: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
