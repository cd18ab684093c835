//! Command-line front end for the rate engine, optimizer and simulator.
//!
//! Every command resolves a [`config::RunConfig`] (file, then flags), runs on a
//! rayon pool sized by `--workers`, and writes CSV or JSON to `--out` or stdout.

pub mod commands;
pub mod config;
pub mod output;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use config::{Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Validation(_) => 2,
            CliError::InsufficientStatistics(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Genetic algorithm.
    Ga,
    /// Exhaustive grid (slow, used as a reference).
    Grid,
}

#[derive(Debug, Parser)]
#[command(
    name = "cowcka",
    version,
    about = "Three-party COW conference key rates and simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Key-rate breakdown at fixed (t, μ) and distance.
    Rate,
    /// Optimized rate and both bounds over a distance grid.
    Sweep,
    /// Optimize (t, μ) at one distance.
    Optimize {
        #[arg(long, value_enum, default_value = "ga")]
        method: Method,
    },
    /// Monte Carlo run compared with the analytic model.
    Simulate {
        /// Write one row per slot to this CSV file.
        #[arg(long, value_name = "PATH")]
        transcript: Option<PathBuf>,
    },
    /// Interference visibility of the CKA run against a two-party COW run.
    Equivalence,
    /// η_lim and the repeaterless bound over a distance grid.
    Bounds,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&cli.overrides)?;
    if cli.overrides.dump_config {
        // `--out` names where the dump goes; keeping it in the dump would make
        // a later `--config` run overwrite its own config file.
        let dumped = RunConfig {
            out: None,
            ..cfg.clone()
        };
        let mut text = dumped.to_json();
        text.push('\n');
        return emit(&cfg, &text);
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let text = pool.install(|| commands::dispatch(&cli.command, &cfg))?;
    emit(&cfg, &text)
}

fn emit(cfg: &RunConfig, text: &str) -> Result<(), CliError> {
    match &cfg.out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}
