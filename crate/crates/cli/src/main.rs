//! Batch front end: parse a TOML run configuration, dispatch one command,
//! write CSV artifacts.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure,
//! 3 infeasible target.

mod commands;
mod config;
mod csv;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "mlblue",
    version,
    about = "Multilevel best linear unbiased estimators: allocation, analysis, simulation"
)]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for CSV artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Override the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the simulation command (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the analytic mean vector, covariance and truth mean.
    Moments,
    /// Optimal sample allocation per configured estimator at the budget.
    Allocate,
    /// Coefficient vectors of the configured estimator schemes.
    Schemes,
    /// Cost-versus-accuracy sweep with fitted slopes.
    Sweep,
    /// Coefficient-distance and variance-gap study over accuracy shifts.
    Convergence,
    /// Empirical validation of the analytic mean/variance/MSE.
    Simulate,
}

/// Application error with the exit-code category baked in.
#[derive(Debug)]
pub struct AppError {
    kind: ErrorKind,
    message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ErrorKind {
    Config,
    Numerical,
    Infeasible,
}

impl AppError {
    pub fn config(message: impl Into<String>) -> Self {
        AppError {
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    /// Core errors raised while interpreting user input are config errors.
    pub fn from_core_as_config(err: mlblue::Error) -> Self {
        AppError {
            kind: ErrorKind::Config,
            message: err.to_string(),
        }
    }

    fn tag(&self) -> &'static str {
        match self.kind {
            ErrorKind::Config => "config",
            ErrorKind::Numerical => "numerical",
            ErrorKind::Infeasible => "infeasible",
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Config => 1,
            ErrorKind::Numerical => 2,
            ErrorKind::Infeasible => 3,
        }
    }
}

impl From<mlblue::Error> for AppError {
    fn from(err: mlblue::Error) -> Self {
        let kind = match err {
            mlblue::Error::Invalid(_) => ErrorKind::Config,
            mlblue::Error::Numerical(_) | mlblue::Error::Stalled { .. } => ErrorKind::Numerical,
            mlblue::Error::Infeasible(_) => ErrorKind::Infeasible,
        };
        AppError {
            kind,
            message: err.to_string(),
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(AppError::config("--threads must be positive"));
        }
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let config_path = cli
        .config
        .ok_or_else(|| AppError::config("--config PATH is required"))?;
    let mut cfg = RunConfig::load(&config_path)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = Some(seed);
    }
    match cli.command {
        Command::Moments => commands::cmd_moments(&cfg, &cli.out),
        Command::Allocate => commands::cmd_allocate(&cfg, &cli.out),
        Command::Schemes => commands::cmd_schemes(&cfg, &cli.out),
        Command::Sweep => commands::cmd_sweep(&cfg, &cli.out),
        Command::Convergence => commands::cmd_convergence(&cfg, &cli.out),
        Command::Simulate => commands::cmd_simulate(&cfg, &cli.out, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not errors.
            use clap::error::ErrorKind as ClapKind;
            if matches!(err.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            let one_line = err.to_string().replace('\n', " ");
            eprintln!("error: config: {}", one_line.trim());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let one_line = err.message.replace('\n', " ");
            eprintln!("error: {}: {}", err.tag(), one_line.trim());
            ExitCode::from(err.exit_code())
        }
    }
}
