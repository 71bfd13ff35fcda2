//! `nestfuse`: generate, train, encode, reconstruct, evaluate, export and
//! serve nested-fusion models and their flattening baselines.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 runtime.

mod commands;
pub mod models;
pub mod server;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nested_fusion::Error;
use serde::Serialize;

pub use commands::{run, RegionsFile};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// Schema of the viz export document served to the viewer.
pub const VIZ_SCHEMA: &str = include_str!("../schema/viz-export.schema.json");

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_USAGE,
            Error::Validation(_) | Error::Format(_) | Error::InvalidReference(_) | Error::Shape(_) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nestfuse", version, about = "Nested multi-resolution latent fusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic two-scale dataset.
    GenSynth(GenSynthArgs),
    /// Train a nested-fusion model or a baseline.
    Train(TrainArgs),
    /// Write per-record latent encodings.
    Encode(EncodeArgs),
    /// Write per-layer predictions for every record.
    Reconstruct(ReconstructArgs),
    /// Score reconstructions and optional region separations.
    Eval(EvalArgs),
    /// Write the viewer's JSON document.
    ExportViz(ExportArgs),
    /// Serve exports and the separation endpoint over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Base grid width in pixels.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Base pixel pitch in microns.
    #[arg(long)]
    pub pitch: Option<f64>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub base_dim: Option<usize>,
    #[arg(long)]
    pub parent_dim: Option<usize>,
    /// Parent grid spacing in microns.
    #[arg(long)]
    pub parent_spacing: Option<f64>,
    /// Parent footprint radius in microns.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Noise for both scales; the per-scale flags take precedence.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub base_noise: Option<f64>,
    #[arg(long)]
    pub parent_noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    NestedFusion,
    JointPca,
    JointVae,
    ConcatPca,
    ConcatVae,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; the loss log and config echo are written beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "nested-fusion")]
    pub model: ModelChoice,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u16).range(1..))]
    pub latent_dim: u16,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Scan groups (parents) per step.
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Global gradient-norm clip; 0 disables it.
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    /// Seed for batch and noise draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed for parameter initialisation.
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub kl_weight: f64,
    /// Child slots per joint row; defaults to the largest child count.
    #[arg(long)]
    pub budget: Option<usize>,
    /// JSON file with further nested-fusion architecture settings.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Loss log path; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EncodeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Draw reparameterisation noise with this seed instead of using zero noise.
    #[arg(long)]
    pub noise_seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, required_unless_present = "compare", conflicts_with = "compare")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate several checkpoints and print them ordered by parent-layer R².
    #[arg(long, num_args = 1..)]
    pub compare: Vec<PathBuf>,
    /// JSON file of region selections to compare.
    #[arg(long)]
    pub regions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = nested_fusion::eval::DEFAULT_PROJECTIONS)]
    pub projections: usize,
    #[arg(long, default_value_t = 0)]
    pub separation_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = nested_fusion::eval::DEFAULT_BINS)]
    pub bins: usize,
    /// Latent points kept in the export; larger sets are subsampled.
    #[arg(long, default_value_t = 100_000)]
    pub max_points: usize,
    /// Subsampling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub regions: Option<PathBuf>,
    #[arg(long, default_value_t = nested_fusion::eval::DEFAULT_PROJECTIONS)]
    pub projections: usize,
    #[arg(long, default_value_t = 0)]
    pub separation_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ServeArgs {
    /// Export files, or directories of `*.json` exports.
    #[arg(long, num_args = 1.., required = true)]
    pub exports: Vec<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory of viewer assets served at `/`.
    #[arg(long)]
    pub assets: Option<PathBuf>,
}
