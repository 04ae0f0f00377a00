//! `scrip`: command-line front end for the token-system toolkit.
//!
//! Exit status is 0 on success, 1 for bad input (including unknown flags)
//! and 2 when an internal check fails.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] scrip_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    /// Acceptance checks failed.
    #[error("{0}")]
    Check(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_internal() => 2,
            CliError::Check(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "scrip",
    version,
    about = "Token systems under the minimum-token selection rule"
)]
pub struct Cli {
    /// Directory for CSV/JSON outputs and the run manifest.
    #[arg(long, global = true, default_value = "scrip-out")]
    pub out: PathBuf,

    /// Worker threads for multi-seed work (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

/// A system given inline or as a JSON file.
#[derive(Debug, Args, Clone)]
pub struct SystemArgs {
    /// JSON file with n, p, q, d and optionally rule, beta, seed. Flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of symmetric agents (used when --p/--q are not given).
    #[arg(long)]
    pub n: Option<usize>,
    /// Request probabilities, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<f64>>,
    /// Availability probabilities, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub q: Option<Vec<f64>>,
    /// Availability draws per period.
    #[arg(long)]
    pub d: Option<usize>,
    /// Provider selection: min_token or uniform.
    #[arg(long)]
    pub rule: Option<String>,
    /// Use d draws with this probability and one draw otherwise.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one chain and estimate tail probabilities.
    Simulate(commands::SimulateArgs),
    /// Symmetric systems over several n and seeds.
    Sweep(commands::SweepArgs),
    /// Closed-form steady state of a two-agent system.
    Exact2(commands::Exact2Args),
    /// Exact stationary law of the chain truncated to a box.
    Oracle(commands::OracleArgs),
    /// Integrate the mean-field ODE (or the two-type system).
    Meanfield(commands::MeanfieldArgs),
    /// Mean-field equilibrium and the (1/2)^M bound check.
    Equilibrium(commands::EquilibriumArgs),
    /// Group sizes of the symmetric system equivalent to rational rates.
    Reduce(commands::ReduceArgs),
    /// Kidney-exchange pool with hospital token ledgers.
    Kidney(commands::KidneyArgs),
    /// Run the acceptance checks.
    Check(commands::CheckArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
