//! Command dispatch for the `adaptkit` binary.
//!
//! Exit codes: 0 success, 1 validation failure, 2 configuration error,
//! 3 I/O error. Failures are also reported on stderr as one JSON object
//! `{"error": <kind>, "message": ..}`.

mod commands;
mod config;

use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

pub use commands::{record_tile_plans, LineError, StatsSummary};
pub use config::{EvalConfig, PipelineConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {err}")]
    Io {
        path: String,
        #[source]
        err: io::Error,
    },
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub(crate) fn io(path: &Path, err: io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            err,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConvertTask {
    Classification,
    Grounding,
    Region,
    Multiview,
    Video,
    Vqa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMetric {
    Mcq,
    Bleu,
    Rouge,
    Signals,
    Avg,
}

#[derive(Debug, Parser)]
#[command(
    name = "adaptkit",
    version,
    about = "Domain-adaptation data pipeline for small multimodal models"
)]
pub struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Root seed for every randomized stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert domain records into conversation records.
    Convert {
        #[arg(long, value_enum)]
        task: ConvertTask,
        /// Input records; stdin when omitted or "-".
        #[arg(long, short)]
        input: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Build a seeded general/domain mixture from a TOML manifest.
    Mix {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Check that every record parses and satisfies its invariants.
    Validate { path: Option<PathBuf> },
    /// Visual-token totals and tile distribution.
    Stats { path: Option<PathBuf> },
    /// Compute an evaluation metric over eval, signal or benchmark records.
    Eval {
        #[arg(long, value_enum)]
        metric: EvalMetric,
        #[arg(long, short)]
        input: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Tile plan and visual-token count for an image size.
    PlanTiles {
        width: u32,
        height: u32,
        #[arg(long)]
        max_tiles: Option<u32>,
        /// Print the plan as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the kernel invariant suite.
    ValidateKernels {
        /// Random stacks for the gradient check.
        #[arg(long, default_value_t = 100)]
        stacks: usize,
    },
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
}

/// Resolves the configuration and runs one command, writing to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn io::Write) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.jobs.is_some() {
        cfg.jobs = cli.jobs;
    }
    cfg.validate()?;
    commands::dispatch(cli.command, &cfg, stdout)
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let rec = ErrorRecord {
                error: e.kind(),
                message: e.to_string(),
            };
            eprintln!(
                "{}",
                serde_json::to_string(&rec).expect("error record serializes")
            );
            ExitCode::from(e.exit_code())
        }
    }
}
