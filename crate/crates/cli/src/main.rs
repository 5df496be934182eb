//! Batch runner for the p-adic heat and porous medium computations.
//!
//! Exit codes: 0 success, 1 invalid input, 2 failed consistency check,
//! 3 solver non-convergence. Errors are also printed to stderr as JSON.

mod config;
mod error;
mod output;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{ExperimentConfig, Format, Task};
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "padic-heat",
    version,
    about = "Vladimirov heat flow and porous medium flow on a p-adic ball"
)]
struct Cli {
    /// Task to run.
    #[arg(value_enum)]
    task: Task,

    /// TOML configuration file; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Seed for every random input.
    #[arg(long)]
    seed: Option<u64>,

    /// Main tolerance of the task.
    #[arg(long)]
    tol: Option<f64>,

    #[arg(long, value_enum)]
    format: Option<Format>,

    /// Prime p.
    #[arg(long)]
    p: Option<u64>,

    /// Ball radius exponent N.
    #[arg(long, allow_hyphen_values = true)]
    radius: Option<i32>,

    /// Resolution exponent M.
    #[arg(long, allow_hyphen_values = true)]
    resolution: Option<i32>,

    /// Operator order alpha.
    #[arg(long)]
    alpha: Option<f64>,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Validation(format!("cannot read {}: {e}", path.display()))
            })?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    config.task = Some(cli.task);
    if let Some(out) = &cli.out {
        config.output.dir = Some(out.clone());
    }
    if let Some(format) = cli.format {
        config.output.format = format;
    }
    config.seed = cli.seed.or(config.seed);
    config.tol = cli.tol.or(config.tol);
    if let Some(p) = cli.p {
        config.model.p = p;
    }
    if let Some(n) = cli.radius {
        config.model.radius = n;
    }
    if let Some(m) = cli.resolution {
        config.model.resolution = m;
    }
    if let Some(alpha) = cli.alpha {
        config.operator.alpha = alpha;
    }
    Ok(config)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = load(cli)?;
    let (artifacts, failure) = tasks::run(&config)?;
    let written = artifacts.write(&config.out_dir(), config.output.format)?;
    for path in written {
        println!("{}", path.display());
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
