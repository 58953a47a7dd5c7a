//! `rollover`: fit demand traces, tabulate trading thresholds, and run paired
//! with/without-rollover market simulations.
//!
//! Exit codes: 0 success, 1 output or unexpected failure, 2 bad input or
//! configuration, 3 model or solver failure, 4 accounting invariant violated.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rollover_core::{DemandError, MarketError, ModelError, PolicyError, SimError};

#[derive(Debug, Parser)]
#[command(name = "rollover", version, about = "Mobile data trading market with rollover")]
pub struct Cli {
    /// Random seed, overrides the config file
    #[arg(long, global = true, env = "ROLLOVER_SEED")]
    pub seed: Option<u64>,
    /// Volume grid step in MB
    #[arg(long, global = true, env = "ROLLOVER_GRID_MB")]
    pub grid_mb: Option<f64>,
    /// Price grid spacing in HKD/GB
    #[arg(long, global = true, env = "ROLLOVER_PRICE_GRID")]
    pub price_grid: Option<f64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "ROLLOVER_THREADS")]
    pub threads: Option<usize>,
    /// Output file or directory, when not given positionally
    #[arg(long, global = true, env = "ROLLOVER_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a truncated normal to each user's daily usage
    Fit {
        /// CSV with header `user_id,day,mb`
        trace: PathBuf,
        /// JSON output (default: --out, else stdout only)
        output: Option<PathBuf>,
        /// Histogram bin width in MB (default: a quarter of the sample deviation)
        #[arg(long)]
        bin_width: Option<f64>,
        /// KS significance level
        #[arg(long, default_value_t = 0.05)]
        significance: f64,
    },
    /// Tabulate buy-up-to and sell-down-to thresholds at the configured quote
    Thresholds {
        config: PathBuf,
        /// CSV output (default: --out, else thresholds.csv)
        output: Option<PathBuf>,
    },
    /// Run the paired with/without-rollover scenario
    Simulate {
        /// Config file; not needed with --from-manifest
        config: Option<PathBuf>,
        /// Output directory (default: --out, else ./run); the only positional
        /// argument when --from-manifest is given
        output: Option<PathBuf>,
        /// Re-run the exact configuration recorded in a manifest
        #[arg(long)]
        from_manifest: Option<PathBuf>,
    },
    /// Relative change of one episode's metrics JSON against another's
    Compare {
        baseline: PathBuf,
        treatment: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Model(String),
    #[error("{0}")]
    Invariant(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Input(_) => 2,
            CliError::Model(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }

    pub fn io(context: impl std::fmt::Display, e: std::io::Error) -> Self {
        CliError::Other(format!("{context}: {e}"))
    }
}

impl From<DemandError> for CliError {
    fn from(e: DemandError) -> Self {
        match e {
            DemandError::TooFewObservations { .. } | DemandError::DegenerateTrace(_) | DemandError::FitFailed(_) => {
                CliError::Model(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::InvalidInput(_) => CliError::Input(e.to_string()),
            _ => CliError::Model(e.to_string()),
        }
    }
}

impl From<MarketError> for CliError {
    fn from(e: MarketError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invariant { .. } => CliError::Invariant(e.to_string()),
            SimError::InvalidConfig(_) | SimError::ShapeMismatch(_) => CliError::Input(e.to_string()),
            SimError::Io(_) | SimError::Csv(_) => CliError::Other(e.to_string()),
            SimError::Policy(p) => p.into(),
            _ => CliError::Model(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
