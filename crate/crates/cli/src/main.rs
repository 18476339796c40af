//! Command-line driver for warped dynamic linear models.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Ctx;
use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<warpdlm::Error> for CliError {
    fn from(e: warpdlm::Error) -> Self {
        use warpdlm::Error as E;
        match e {
            E::InvalidParameter(_) | E::Dimension(_) | E::Parse(_) | E::OutOfSupport { .. } => CliError::Config(e.to_string()),
            E::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "warpdlm", version, about = "Warped dynamic linear models for count time series")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads for the particle filter.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate a series from the [simulate] table.
    Simulate,
    /// Fit the transformation and the variances.
    Fit,
    /// Filtering distributions and one-step predictive draws.
    Filter,
    /// Smoothing distributions of the state path.
    Smooth,
    /// Forecast pmfs and draws past the end of the series.
    Forecast,
    /// Streaming particle filter with snapshots and resume.
    Pf,
    /// Out-of-sample comparison of transformations.
    Evaluate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(CliError::Config)?,
        None => return Err(CliError::Config("--config is required".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let name = match cli.command {
        Command::Simulate => "simulate",
        Command::Fit => "fit",
        Command::Filter => "filter",
        Command::Smooth => "smooth",
        Command::Forecast => "forecast",
        Command::Pf => "pf",
        Command::Evaluate => "evaluate",
    };
    let ctx = Ctx::new(cfg, cli.out, cli.threads, name)?;
    match cli.command {
        Command::Simulate => commands::simulate(ctx),
        Command::Fit => commands::fit(ctx),
        Command::Filter => commands::filter_cmd(ctx),
        Command::Smooth => commands::smooth_cmd(ctx),
        Command::Forecast => commands::forecast_cmd(ctx),
        Command::Pf => commands::pf_cmd(ctx),
        Command::Evaluate => commands::evaluate(ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("warpdlm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
