//! Command-line front end.
//!
//! Every command resolves its settings in three layers: built-in defaults,
//! then the optional `--config` JSON file, then explicit flags. The resolved
//! settings (seed included) are printed before any work starts and saved as
//! `resolved_config.json` in the output directory.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classical::ClassicalError;
use crate::datagen::{DatagenError, Role};
use crate::encoder::EncoderError;
use crate::nn::NnError;
use crate::quality::MetricError;
use crate::tensors::{FormatError, ShapeError};

pub use commands::{
    pred_file, BenchReport, DeblurRecord, EvalOutput, FrameTiming, BENCH_FILE, CHECKPOINT_DIR,
    DEBLUR_FILE, LOG_FILE, REPORT_JSON, REPORT_TXT, RESOLVED_FILE, STATE_FILE, TRAJ_FILE,
};
pub use config::{
    BenchSettings, Common, DeblurSettings, EvalSettings, ModelKind, ResolvedConfig,
    SynthSettings, TrajSettings, TrainSettings,
};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error (bad flag or flag value)
  3  invalid configuration
  4  a referenced input path does not exist
  5  I/O or file-format error
  6  numerical failure (divergence, non-finite loss, ill-conditioned fit)
  7  method requirements not met (missing field maps or checkpoint)
  8  metric undefined for the given images";

#[derive(Debug, Parser)]
#[command(name = "spiral-agcnn", version, about, after_help = EXIT_CODES)]
pub struct Cli {
    /// JSON file with settings; explicit flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed for all randomness (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives the reproducible single-threaded mode.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesise a phantom dataset.
    Synth(SynthArgs),
    /// Train a CNN or AG-CNN on a dataset's train split.
    Train(TrainArgs),
    /// Deblur the frames of one manifest role.
    Deblur(DeblurArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Time single-threaded AG-CNN inference against iterative reconstruction.
    Bench(BenchArgs),
    /// Export a spiral trajectory as an N×3 array (kx, ky, t).
    Traj(TrajArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn gate_filter(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(f @ (1 | 3 | 5)) => Ok(f),
        _ => Err(format!("{s:?} is not one of 1, 3, 5")),
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Subject groups; about 15% each go to val and test.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    /// Frames per group.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames_per_group: Option<usize>,
    /// Image matrix size N (N×N).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<usize>,
    /// Field of view in cm.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fov_cm: Option<f64>,
    /// Sampling interval in seconds.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    /// Comma-separated readout lengths in seconds.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub readouts_s: Option<Vec<f64>>,
    /// CG iterations for the blurred reconstruction.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cg_iters: Option<usize>,
    /// Std of added complex Gaussian k-space noise.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    /// Also write a copy of the test split at every readout under `sweep/`.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub sweep: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset manifest (file or its directory).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Architecture.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    /// First gate filter size (1, 3 or 5).
    #[arg(long, value_parser = gate_filter)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<usize>,
    /// Second gate filter size (1, 3 or 5).
    #[arg(long, value_parser = gate_filter)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f2: Option<usize>,
    /// Gate channel reduction ratio.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduction: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Use only the first N training frames.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_frames: Option<usize>,
    /// Use only the first N validation frames.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_val_frames: Option<usize>,
    /// Continue from a `state.json` written by an earlier run.
    #[arg(long, value_name = "STATE")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DeblurArgs {
    /// Dataset manifest (file or its directory).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Split to process.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    /// Correction method.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    /// Checkpoint directory (cnn, agcnn).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Directory the manifest's field-map paths resolve against (mfi, ir).
    #[arg(long, value_name = "DIR")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fieldmaps: Option<PathBuf>,
    /// Iterations for ir.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    /// Relative residual tolerance for ir.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Basis count for mfi (default from the field range).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mfi_l: Option<usize>,
    /// Process only the first N frames of the split.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_frames: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Dataset manifest (file or its directory).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Split to score.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    /// Prediction directories written by `deblur`; one table row each.
    #[arg(long = "pred", value_name = "DIR")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preds: Option<Vec<PathBuf>>,
    /// Omit the blurred-input row.
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub no_input: bool,
    /// Score only the first N frames of the split.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_frames: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    /// Image matrix size N (N×N).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<usize>,
    /// Readout length in seconds.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub readout_s: Option<f64>,
    /// IR iterations (fixed, no early stop).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    /// Timed frames.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    /// Untimed frames run first.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
    /// AG-CNN checkpoint; a freshly initialised AG-CNN(3,3) otherwise.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrajArgs {
    /// Image matrix size N (N×N).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<usize>,
    /// Field of view in cm.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fov_cm: Option<f64>,
    /// Readout length in seconds.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub readout_s: Option<f64>,
    /// Sampling interval in seconds.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    /// Interleaf count (default: smallest adequately sampled count).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interleaves: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Agcnn,
    Cnn,
    Mfi,
    Ir,
    None,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Agcnn => "agcnn",
            Method::Cnn => "cnn",
            Method::Mfi => "mfi",
            Method::Ir => "ir",
            Method::None => "none",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("path does not exist: {}", .0.display())]
    MissingPath(PathBuf),
    #[error("{0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Method(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::MissingPath(_) => 4,
            CliError::Io(_) => 5,
            CliError::Numerical(_) => 6,
            CliError::Method(_) => 7,
            CliError::Metric(_) => 8,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(format!("json: {e}"))
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ShapeError> for CliError {
    fn from(e: ShapeError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::Diverged { .. } => CliError::Numerical(e.to_string()),
            EncoderError::InvalidAugmentation { .. } | EncoderError::ZeroIterations => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::TooFewGroups(_) | DatagenError::Config(_) | DatagenError::Spiral(_) => {
                CliError::Config(e.to_string())
            }
            DatagenError::Encoder(e) => e.into(),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Config(_) | NnError::EmptyDataset => CliError::Config(e.to_string()),
            NnError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<ClassicalError> for CliError {
    fn from(e: ClassicalError) -> Self {
        match e {
            ClassicalError::TooFewBases(_)
            | ClassicalError::EmptyRange { .. }
            | ClassicalError::BadStep(_) => CliError::Config(e.to_string()),
            ClassicalError::Encoder(e) => e.into(),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<crate::spiral::SpiralError> for CliError {
    fn from(e: crate::spiral::SpiralError) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let resolved = config::resolve(&cli)?;
    println!("resolved config: {}", serde_json::to_string(&resolved)?);
    let threads = resolved.common().threads.map(|t| t as usize).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| commands::execute(&resolved))
}
