//! Command-line pipeline: synthesize data, search, decode, cost, retrain.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{resolve_output, PathsConfig, RunConfig, OUTPUT_DIR_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] msnas_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "msnas", version, about = "Multi-scale neural architecture search for segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search-space cardinalities.
    Count(CountArgs),
    /// Write a synthetic segmentation dataset.
    Synth(SynthArgs),
    /// Run the two-phase architecture search.
    Search(SearchArgs),
    /// Decode a checkpoint into an architecture file and DOT rendering.
    Decode(DecodeArgs),
    /// Parameter and FLOP accounting.
    Cost(CostArgs),
    /// k-fold retraining of a decoded architecture.
    Train(TrainArgs),
    /// Evaluate trained weights on a dataset.
    Eval(EvalArgs),
    /// Graphviz rendering of a supernet, checkpoint, or architecture.
    ExportDot(ExportDotArgs),
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[arg(long, default_value_t = 10)]
    pub layers: usize,
    #[arg(long, default_value_t = 5)]
    pub scales: usize,
    #[arg(long, default_value_t = 3)]
    pub blocks: usize,
    /// Candidate operators per edge, the zero operator included.
    #[arg(long, default_value_t = 5)]
    pub ops: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Overrides `[search] seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Paths to keep; defaults to the checkpoint's configured value.
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Architecture file to cost.
    #[arg(long, conflicts_with = "checkpoint")]
    pub arch: Option<PathBuf>,
    /// Checkpoint to decode once per `--variants` entry.
    #[arg(long, requires = "variants")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<usize>,
    /// Square input side; defaults to the checkpoint's image size.
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub arch: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Overrides `[train] folds`.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Overrides `[train] epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Skip fitting the final model on the whole dataset.
    #[arg(long)]
    pub no_weights: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub arch: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportDotArgs {
    /// Supernet with β weights and the top paths highlighted.
    #[arg(long, conflicts_with_all = ["arch", "layers"])]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Decoded architecture with its paths highlighted.
    #[arg(long, conflicts_with = "layers")]
    pub arch: Option<PathBuf>,
    /// Bare supernet of this many layers.
    #[arg(long, requires = "scales")]
    pub layers: Option<usize>,
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `args` and runs the command. Messages go to stdout/stderr; the
/// return value is the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
