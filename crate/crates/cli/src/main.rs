//! `dust`: config-driven runner for data collection, estimation, steering and Monte Carlo studies.

// `!(x > 0.0)` is used deliberately so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dust_core::DustError;

#[derive(Parser, Debug)]
#[command(name = "dust", version, about = "Data-driven uncertainty-aware steering of linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides `mc.trials`.
    #[arg(long)]
    trials: Option<usize>,
    /// Overrides `data.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Reads `data.csv`/`data.json` from this directory instead of simulating.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Method {
    Mle,
    Ce,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the configured system and write the dataset.
    Collect(Common),
    /// Estimate the noise realization and the nominal model.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "mle")]
        method: Method,
    },
    /// Tabulate the analytic and empirical uncertainty bounds.
    Bounds(Common),
    /// Nominal or robust mean steering.
    SteerMean(Common),
    /// Nominal or robust covariance steering.
    SteerCov(Common),
    /// Covariance steering with probabilistic model uncertainty.
    SteerPu(Common),
    /// Closed-loop Monte Carlo of the configured designs on the true system.
    Montecarlo(Common),
    /// Regenerates one of the feasibility or bound tables with built-in settings.
    Reproduce {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        table: u8,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, arguments or input files.
    Invalid(String),
    /// The convex program is infeasible; diagnostics were written.
    Infeasible(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "{m}"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<DustError> for CliError {
    fn from(e: DustError) -> Self {
        match e {
            DustError::Numerical(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DUST_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Invalid(format!("DUST_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Invalid(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Collect(c) => commands::collect(&c.into()),
        Command::Estimate { common, method } => commands::estimate(&common.into(), method),
        Command::Bounds(c) => commands::bounds(&c.into()),
        Command::SteerMean(c) => commands::steer_mean(&c.into()),
        Command::SteerCov(c) => commands::steer_cov(&c.into()),
        Command::SteerPu(c) => commands::steer_pu(&c.into()),
        Command::Montecarlo(c) => commands::montecarlo(&c.into()),
        Command::Reproduce { table, out, trials, seed } => commands::reproduce(table, &out, trials, seed),
    }
}

impl From<Common> for commands::Args {
    fn from(c: Common) -> Self {
        commands::Args { config: c.config, out: c.out, trials: c.trials, seed: c.seed, data: c.data }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dust: {e}");
            ExitCode::from(e.code())
        }
    }
}
