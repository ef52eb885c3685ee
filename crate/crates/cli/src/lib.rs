//! `lae`: batch driver for the labelling engine.

pub mod commands;
pub mod config;
pub mod output;
pub mod stats;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "lae", version, about = "Dataset engine for open-vocabulary remote-sensing detection")]
pub struct Cli {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker pool size; for `autolabel`, the in-flight request limit per service.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// tracing filter, e.g. `info` or `lae_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Slice large images into overlapping tiles with remapped boxes.
    Tile(TileArgs),
    /// Convert COCO instances (or re-canonicalize a manifest).
    Convert(ConvertArgs),
    /// Down-sample over-represented categories.
    Sample(SampleArgs),
    /// Split images with too many annotations into chunks.
    Split(SplitArgs),
    /// Union several manifests.
    Merge(MergeArgs),
    /// Label raw images through the proposal and naming services.
    Autolabel(AutolabelArgs),
    /// Apply the rule filter to stored proposals and naming records.
    Filter(FilterArgs),
    /// Build a benchmark from per-dataset category selections.
    AssembleBenchmark(AssembleArgs),
    /// Emit per-step vocabulary batches as JSON lines.
    DvcSample(DvcArgs),
    /// COCO-style AP/AP50/AP75 of detections against a benchmark.
    Eval(EvalArgs),
    /// Run the numerics self-test suite.
    CheckMath(CheckMathArgs),
    /// Image, category and instance counts.
    Stats(StatsArgs),
    /// Serve the deterministic mock services until interrupted.
    MockServices(MockArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Tile(_) => "tile",
            Command::Convert(_) => "convert",
            Command::Sample(_) => "sample",
            Command::Split(_) => "split",
            Command::Merge(_) => "merge",
            Command::Autolabel(_) => "autolabel",
            Command::Filter(_) => "filter",
            Command::AssembleBenchmark(_) => "assemble-benchmark",
            Command::DvcSample(_) => "dvc-sample",
            Command::Eval(_) => "eval",
            Command::CheckMath(_) => "check-math",
            Command::Stats(_) => "stats",
            Command::MockServices(_) => "mock-services",
        }
    }
}

#[derive(Debug, Args)]
pub struct TileArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub tile_size: Option<u32>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long)]
    pub min_visibility: Option<f64>,
    #[arg(short, long, default_value = "tiles.json")]
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceFormat {
    Coco,
    Manifest,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "coco")]
    pub from: SourceFormat,
    /// Dataset name; defaults to the input file stem.
    #[arg(long)]
    pub name: Option<String>,
    /// Prefix joined to COCO `file_name`s to form image URIs.
    #[arg(long)]
    pub image_root: Option<String>,
    #[arg(short, long, default_value = "manifest.json")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub threshold: Option<usize>,
    #[arg(short, long, default_value = "sampled.json")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(short, long, default_value = "split.json")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Drop later instances whose `source_id` was already seen.
    #[arg(long)]
    pub dedup: bool,
    #[arg(short, long, default_value = "merged.json")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct FilterFlags {
    #[arg(long)]
    pub min_likelihood: Option<f64>,
    #[arg(long)]
    pub monotone_std: Option<f64>,
    /// Comma-separated categories to drop.
    #[arg(long)]
    pub blocklist: Option<String>,
}

#[derive(Debug, Args)]
pub struct AutolabelArgs {
    /// Manifest of raw images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, env = "LAE_SAM_ENDPOINT")]
    pub proposal_endpoint: Option<String>,
    #[arg(long, env = "LAE_LVLM_ENDPOINT")]
    pub naming_endpoint: Option<String>,
    /// Bearer token for the naming service; never written to run records.
    #[arg(long, env = "LAE_LVLM_API_KEY", hide_env_values = true)]
    pub api_key: Option<String>,
    #[arg(long)]
    pub points: Option<u32>,
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    #[arg(long)]
    pub stability_threshold: Option<f64>,
    #[arg(long)]
    pub top_k_large: Option<usize>,
    #[arg(long)]
    pub top_k_small: Option<usize>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[command(flatten)]
    pub filter: FilterFlags,
    #[arg(short, long, default_value = "labels.json")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Proposal CSV.
    #[arg(long)]
    pub proposals: PathBuf,
    /// Naming records as JSON lines, aligned row by row with the proposals.
    #[arg(long)]
    pub names: PathBuf,
    /// JSON object mapping crop names to grayscale standard deviation.
    #[arg(long)]
    pub crop_stats: Option<PathBuf>,
    #[command(flatten)]
    pub filter: FilterFlags,
    #[arg(short, long, default_value = "instances.json")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct AssembleArgs {
    #[arg(long)]
    pub selections: PathBuf,
    /// Test-split manifest; matched to selections by manifest name.
    #[arg(long = "pool", required = true)]
    pub pools: Vec<PathBuf>,
    #[arg(long, default_value = "LAE-80C")]
    pub name: String,
    #[arg(short, long, default_value = "benchmark.json")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct DvcArgs {
    /// Category registry: a manifest (its category table) or one name per line.
    #[arg(long)]
    pub registry: PathBuf,
    /// Manifest whose images each form one step, positives taken from their labels.
    #[arg(long, conflicts_with = "positives")]
    pub input: Option<PathBuf>,
    /// Comma-separated positives reused for every step.
    #[arg(long)]
    pub positives: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub n_dv: Option<usize>,
    #[arg(short, long, default_value = "batches.jsonl")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detections as JSON lines.
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub benchmark: PathBuf,
    #[arg(long)]
    pub max_dets: Option<usize>,
    /// `coco101` or `voc11`.
    #[arg(long)]
    pub interpolation: Option<String>,
    #[arg(short, long, default_value = "eval.json")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct CheckMathArgs {
    #[arg(short, long, default_value = "math.json")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(short, long, default_value = "stats.json")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct MockArgs {
    #[arg(long, default_value = "127.0.0.1:8700")]
    pub bind: std::net::SocketAddr,
    #[arg(long, default_value_t = 0.0)]
    pub failure_rate: f64,
    #[arg(long)]
    pub api_key: Option<String>,
}

/// Single-line JSON error record for stderr.
pub fn error_record(command: &str, err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|c| {
            if let Some(e) = c.downcast_ref::<lae_core::Error>() {
                Some(e.kind())
            } else if c.is::<std::io::Error>() {
                Some("io")
            } else if c.is::<serde_json::Error>() {
                Some("malformed-json")
            } else {
                None
            }
        })
        .unwrap_or("invalid-argument");
    json!({ "error": { "command": command, "kind": kind, "message": format!("{err:#}") } }).to_string()
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    commands::dispatch(cli)
}
