//! `blo-bench`: reproducible bi-level optimization experiments.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Overrides};
use error::CliError;

#[derive(Parser)]
#[command(name = "blo-bench", version, about = "Bi-level optimization benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One estimator over one or more seeds.
    Run(Common),
    /// Several `entry.<label>` estimators on the same problem and seeds.
    Compare(Common),
    /// Per-step error of the first-order approximation over a step-size sweep.
    FoError(Common),
    /// Iterations to tolerance on quadratic problems of varying condition.
    Quadratic(Common),
    /// Stochastic versus deterministic selection on the polynomial toy grid.
    ToyGrid(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    /// Estimator name; a comma-separated list for compare.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Also write a first-order probe at each run's final λ (hpo-sgld only).
    #[arg(long)]
    probe: bool,
    /// Record per-iteration wall time; traces are then no longer byte-stable.
    #[arg(long)]
    timing: bool,
    /// Override a config entry, e.g. `--set outer.iterations=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            problem: self.problem.clone(),
            estimator: self.estimator.clone(),
            seed: self.seed,
            seeds: self.seeds.clone(),
            out: self.out.clone(),
            probe: self.probe,
            timing: self.timing,
            set: self.set.clone(),
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(c) => commands::cmd_run(&ExperimentConfig::load(&c.overrides(), "run", "synth1d", false)?),
        Command::Compare(c) => {
            commands::cmd_compare(&ExperimentConfig::load(&c.overrides(), "compare", "synth1d", true)?)
        }
        Command::FoError(c) => {
            commands::cmd_fo_error(&ExperimentConfig::load(&c.overrides(), "fo", "synth1d", false)?)
        }
        Command::Quadratic(c) => {
            commands::cmd_quadratic(&ExperimentConfig::load(&c.overrides(), "quad", "quadratic", true)?)
        }
        Command::ToyGrid(c) => {
            commands::cmd_toy_grid(&ExperimentConfig::load(&c.overrides(), "toy", "poly-toy", false)?)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("blo-bench: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
