use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use apeorder_core::corpus::OrderingMode;

#[derive(Debug, Parser, Serialize)]
#[command(name = "apeorder", version, about = "Edit-order analysis and action-prediction training for post-edited MT")]
pub struct Cli {
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Extract minimal edit scripts from (mt, pe) pairs.
    Extract(ExtractArgs),
    /// Realize scripts as left-to-right or shuffled traces.
    Reorder(ReorderArgs),
    /// Replay keystroke logs into unfiltered human traces.
    Replay(ReplayArgs),
    /// Align human traces to minimal scripts (h-ord traces).
    Align(AlignArgs),
    /// Ordering statistics, relative-position curves, POS preferences and decoding behavior.
    Analyze(AnalyzeArgs),
    /// Train an action-prediction model.
    Train(Box<TrainArgs>),
    /// Decode samples with a trained model.
    Decode(DecodeArgs),
    /// Score hypotheses against post-edits with TER and BLEU.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic corpus with keystroke logs.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    /// Sample file (JSON lines).
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReorderArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// l2r, shuff or h-ord.
    #[arg(long, default_value = "l2r")]
    pub mode: OrderingMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AlignArgs {
    /// Sample file.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Human traces from `replay`; replayed from the samples' keystrokes when absent.
    #[arg(long, value_name = "FILE")]
    pub human: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Sample file the traces were built from.
    #[arg(long, value_name = "FILE")]
    pub samples: PathBuf,
    /// Trace files (`reorder`, `align` or `replay` output).
    #[arg(long, value_name = "FILE", num_args = 1.., required = true)]
    pub traces: Vec<PathBuf>,
    /// Decoding output files.
    #[arg(long, value_name = "FILE", num_args = 1..)]
    pub decoded: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub grid_size: usize,
    /// Smallest per-word first-action difference kept in the POS table.
    #[arg(long, default_value_t = 5)]
    pub min_diff: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub samples: PathBuf,
    /// Prebuilt trace file; otherwise traces are built with --mode and --seed.
    #[arg(long, value_name = "FILE")]
    pub traces: Option<PathBuf>,
    #[arg(long, default_value = "l2r")]
    pub mode: OrderingMode,
    /// Samples used for checkpoint selection by TER.
    #[arg(long, value_name = "FILE")]
    pub dev_samples: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 256)]
    pub ffn: usize,
    /// Size of the position table.
    #[arg(long, default_value_t = 128)]
    pub max_len: usize,
    #[command(flatten)]
    pub train: TrainOverrides,
}

/// Training hyperparameters; unset values keep their defaults.
#[derive(Debug, Args, Serialize)]
pub struct TrainOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    #[arg(long)]
    pub tokens_per_batch: Option<usize>,
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
    #[arg(long)]
    pub max_actions: Option<usize>,
    #[arg(long)]
    pub init_std: Option<f64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Draw a fresh random order per trace every epoch (shuff only).
    #[arg(long)]
    pub resample_per_epoch: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeArgs {
    /// Checkpoint or model file.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub max_actions: usize,
    /// On the n-th visit of a state take its n-th best action instead of stopping.
    #[arg(long)]
    pub nth_on_revisit: bool,
    /// Label stored with each record, e.g. the training order.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Hypotheses: lines with `id` and either `output` or `trace`.
    #[arg(long, value_name = "FILE")]
    pub hyp: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub samples: PathBuf,
    /// Per-sentence CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Enable the greedy block-shift search in TER.
    #[arg(long)]
    pub shifts: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    pub min_len: usize,
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,
    /// Fraction of samples whose editor makes an unalignable move.
    #[arg(long, default_value_t = 0.0)]
    pub unalignable_rate: f64,
    #[arg(long)]
    pub no_keystrokes: bool,
    /// Left-to-right editors without jumps, hesitations or typos.
    #[arg(long)]
    pub clean_editor: bool,
}
