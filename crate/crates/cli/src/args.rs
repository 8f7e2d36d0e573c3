use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "qdet", version, about = "Fixed-point face detector toolkit")]
pub struct Cli {
    /// Write the run manifest (JSON) here instead of to stderr.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(untagged)]
pub enum Command {
    /// Build a seeded random-weight detector and save it.
    GenModel(GenModelArgs),
    /// Record per-layer activation ranges over calibration images.
    Profile(ProfileArgs),
    /// Convert a float model to fixed point.
    Quantize(QuantizeArgs),
    /// Run multi-scale detection and write an FDDB detection file.
    Detect(DetectArgs),
    /// Average precision of a detection file against FDDB annotations.
    Eval(EvalArgs),
    /// Time float and 16-bit fixed-point forward passes.
    Bench(BenchArgs),
    /// Write a small synthetic face corpus with FDDB annotations.
    Synth(SynthArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenModel(_) => "gen-model",
            Command::Profile(_) => "profile",
            Command::Quantize(_) => "quantize",
            Command::Detect(_) => "detect",
            Command::Eval(_) => "eval",
            Command::Bench(_) => "bench",
            Command::Synth(_) => "synth",
        }
    }

    pub fn config(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenModelArgs {
    /// Width multiplier in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Head placement: A, B or C.
    #[arg(long = "out", default_value = "A")]
    pub out_strategy: String,
    /// Anchor file, one `width height` per line (default: 25 built-in).
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Nominal square input size recorded in the model.
    #[arg(long, default_value_t = 224)]
    pub input_size: usize,
    /// Fine-tuning freeze point, kept as metadata.
    #[arg(long, default_value_t = 98)]
    pub frozen_until: usize,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ProfileArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of .ppm/.pgm/.pnm/.png calibration images.
    #[arg(long)]
    pub images: PathBuf,
    /// Use at most this many images, drawn with --seed.
    #[arg(long, default_value_t = 100)]
    pub limit: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("mode").required(true).args(["fractional", "auto"])))]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub word_bits: u32,
    /// Force n fractional bits for weights and activations.
    #[arg(long)]
    pub fractional: Option<u32>,
    /// Size the integer part from the profile and weight ranges.
    #[arg(long)]
    pub auto: bool,
    /// With --fractional, saturate activations outside the format instead
    /// of failing.
    #[arg(long)]
    pub allow_saturation: bool,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("source").required(true).args(["image", "list"])))]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// File of image ids or paths, one per line, relative to --image-root.
    #[arg(long)]
    pub list: Option<PathBuf>,
    /// Base directory for --list entries (default: the list's directory).
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long, default_value = "0.5,1,2")]
    pub scales: String,
    #[arg(long, default_value_t = 0.5)]
    pub score_t: f64,
    #[arg(long, default_value_t = 0.3)]
    pub iou_t: f64,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Detection file (default: stdout).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub dets: PathBuf,
    /// FDDB ellipse lists, one per fold.
    #[arg(long, required = true, num_args = 1..)]
    pub annotations: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long, default_value_t = 1.3)]
    pub box_alpha: f64,
    #[arg(long, default_value_t = 0.26)]
    pub box_beta: f64,
    /// Write the pooled precision-recall curve as CSV.
    #[arg(long)]
    pub pr_csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// Float model to time (default: a seeded random model).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Width multiplier of the generated model when --model is absent.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 224)]
    pub input_size: usize,
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 16)]
    pub word_bits: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, short)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub images: usize,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "fold-01")]
    pub fold: String,
    /// Also write a detection file with one box per ground-truth face.
    #[arg(long)]
    pub planted: Option<PathBuf>,
}
