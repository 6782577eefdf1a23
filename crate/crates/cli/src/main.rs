//! `imbp`: simulation and validation runs for interacting multitype
//! branching processes.
//!
//! Every run writes its data files and a `manifest.json` into `--out`.
//! Exit codes: 0 success, 1 I/O, 2 config error, 3 numerical guard tripped,
//! 4 statistical check failed.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::LoadedConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical guard: {0}")]
    Numerical(String),
    #[error("check failed: {0}")]
    Failed(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Failed(_) => 4,
        }
    }
}

impl From<imbp_core::Error> for CliError {
    fn from(e: imbp_core::Error) -> Self {
        use imbp_core::Error as E;
        match e {
            e if e.is_numerical_guard() => CliError::Numerical(e.to_string()),
            E::Io(e) => CliError::Io(e.to_string()),
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<imbp_core::ValidationReport> for CliError {
    fn from(e: imbp_core::ValidationReport) -> Self {
        CliError::Config(format!("model: {e}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Parser)]
#[command(name = "imbp", version, about = "Simulate interacting multitype branching processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Discrete-state trajectories (Gillespie or time-change engine).
    SimulateDiscrete(RunArgs),
    /// Continuous-state trajectories by Euler–Maruyama.
    SimulateContinuous(RunArgs),
    /// Frozen-interaction grid trajectories (`--epsilon`, `--delta`); with
    /// `experiment.grids` also a grid convergence report.
    SimulateGrid(RunArgs),
    /// Scaling-limit experiment on a Feller family over `--n-list`.
    Scaling(RunArgs),
    /// Gillespie marginals against the uniformization oracle.
    OracleCheck(RunArgs),
    /// Two-sample comparison of the two discrete engines.
    Equivalence(RunArgs),
    /// Re-run the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Output directory.
    #[arg(long, default_value = "imbp-out")]
    out: PathBuf,
    /// Worker threads; data files do not depend on it.
    #[arg(long, env = "IMBP_WORKERS")]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config with `model`, `engine` and `experiment` sections.
    #[arg(long)]
    config: PathBuf,
    /// Master seed (overrides `experiment.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of paths (overrides `experiment.paths`).
    #[arg(long)]
    paths: Option<usize>,
    /// Simulation horizon, also the evaluation time of reports.
    #[arg(long)]
    horizon: Option<f64>,
    /// Euler step.
    #[arg(long)]
    dt: Option<f64>,
    /// Grid window length.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Grid population quantum.
    #[arg(long)]
    delta: Option<f64>,
    /// Comma-separated scaling indices, e.g. `10,100,1000`.
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<u64>>,
    /// Trajectory file format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct RerunArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("imbp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, args) = match cli.command {
        Command::Rerun(args) => return manifest::rerun(&args.manifest, &args.common.out, args.common.workers),
        Command::SimulateDiscrete(a) => ("simulate-discrete", a),
        Command::SimulateContinuous(a) => ("simulate-continuous", a),
        Command::SimulateGrid(a) => ("simulate-grid", a),
        Command::Scaling(a) => ("scaling", a),
        Command::OracleCheck(a) => ("oracle-check", a),
        Command::Equivalence(a) => ("equivalence", a),
    };
    let loaded = LoadedConfig::from_file(&args.config)?;
    let overrides = commands::Overrides {
        seed: args.seed,
        paths: args.paths,
        horizon: args.horizon,
        dt: args.dt,
        epsilon: args.epsilon,
        delta: args.delta,
        n_list: args.n_list,
        format: args.format,
    };
    let params = commands::Params::resolve(name, &loaded.config, overrides)?;
    manifest::execute(&loaded, &params, &args.common.out, args.common.workers)
}
