use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rbpn_core::config::{Integration, PfSequence, SizeVariant, TemporalOrder};
use rbpn_core::dataset::DatasetKind;
use serde::de::DeserializeOwned;

/// Parses an enum through its serde names.
fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("invalid value {s:?}"))
}

fn order(s: &str) -> Result<TemporalOrder, String> {
    serde_enum(&s.to_ascii_uppercase())
}

fn integration(s: &str) -> Result<Integration, String> {
    serde_enum(&s.to_ascii_lowercase())
}

fn pf_sequence(s: &str) -> Result<PfSequence, String> {
    serde_enum(&s.to_ascii_lowercase().replace('-', "_"))
}

fn size_variant(s: &str) -> Result<SizeVariant, String> {
    match s {
        "s" | "S" => Ok(SizeVariant::S),
        "l" | "L" => Ok(SizeVariant::L),
        _ => serde_enum(s),
    }
}

fn dataset_kind(s: &str) -> Result<DatasetKind, String> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "framedir" | "frame_dir" => Ok(DatasetKind::FrameDir),
        other => serde_enum(other),
    }
}

#[derive(Parser, Debug)]
#[command(name = "rbpn", version, about = "Recurrent back-projection video super-resolution", arg_required_else_help = true)]
pub struct Cli {
    /// Machine-readable output
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for initialization, shuffling and sampling
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dataset root directory
    #[arg(long, global = true, env = "RBPN_DATASET_ROOT")]
    pub dataset_root: Option<PathBuf>,
    /// Directory for outputs
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write LR frames for a dataset, or generate a procedural dataset
    PrepareData(PrepareArgs),
    /// Precompute .flo files with an external flow program
    ComputeFlow(FlowArgs),
    /// Train a model
    Train(TrainArgs),
    /// Super-resolve a directory of LR frames
    Infer(InferArgs),
    /// Evaluate bicubic or a trained model on a dataset
    Eval(EvalArgs),
    /// Train and evaluate a grid of variants on procedural data
    Ablate(AblateArgs),
    /// Print parameter and compute breakdowns
    Inspect(InspectArgs),
    /// Render an SVG chart from an eval or ablate JSON report
    Plot(PlotArgs),
}

/// Model fields; every flag overrides the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Flat key = value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// rbpn, dbpn_sisr, dbpn_misr or rbpn_misr
    #[arg(long, default_value = "rbpn")]
    pub arch: String,
    #[arg(long)]
    pub scale: Option<u32>,
    #[arg(long)]
    pub context_n: Option<usize>,
    #[arg(long)]
    pub c_l: Option<usize>,
    #[arg(long)]
    pub c_m: Option<usize>,
    #[arg(long)]
    pub c_h: Option<usize>,
    #[arg(long)]
    pub sisr_stages: Option<usize>,
    #[arg(long)]
    pub resnet_blocks: Option<usize>,
    /// P, PF or PR
    #[arg(long, value_parser = order)]
    pub order: Option<TemporalOrder>,
    /// alternating or past_then_future
    #[arg(long, value_parser = pf_sequence)]
    pub pf_sequence: Option<PfSequence>,
    /// concat or last
    #[arg(long, value_parser = integration)]
    pub integration: Option<Integration>,
    #[arg(long)]
    pub use_flow: Option<bool>,
    #[arg(long)]
    pub residual_learning: Option<bool>,
    /// S, base or L
    #[arg(long, value_parser = size_variant)]
    pub size_variant: Option<SizeVariant>,
}

/// Training fields; every flag overrides the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_initial: Option<f64>,
    #[arg(long)]
    pub lr_decay_factor: Option<f64>,
    #[arg(long)]
    pub lr_decay_epoch: Option<usize>,
    #[arg(long)]
    pub total_epochs: Option<usize>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub patch_lr: Option<usize>,
}

/// Where frames and flows come from.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// framedir or vimeo90k
    #[arg(long, value_parser = dataset_kind, default_value = "framedir")]
    pub kind: DatasetKind,
    /// Vimeo-90k list file (defaults to <root>/sep_testlist.txt)
    #[arg(long)]
    pub list: Option<PathBuf>,
    /// Directory of precomputed .flo files
    #[arg(long)]
    pub flow_dir: Option<PathBuf>,
    /// External flow program: `<cmd> <from.png> <to.png> <out.flo>`
    #[arg(long)]
    pub flow_cmd: Option<String>,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Generate this many procedural sequences instead of reading a dataset
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 7)]
    pub frames: usize,
    /// HR height of procedural frames
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// HR width of procedural frames
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub scale: u32,
}

#[derive(Args, Debug)]
pub struct FlowArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Frames on disk are already LR
    #[arg(long)]
    pub lr_input: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub data: DataArgs,
    /// Train on this many procedural sequences instead of a dataset
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Continue from a checkpoint directory
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Model or checkpoint directory
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of LR frames
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// bicubic or model
    #[arg(long, default_value = "bicubic")]
    pub method: String,
    /// Model or checkpoint directory (for --method model)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Label used in reports
    #[arg(long)]
    pub dataset: Option<String>,
    /// A or B
    #[arg(long, default_value = "A")]
    pub protocol: String,
    #[arg(long, default_value_t = 4)]
    pub scale: u32,
    #[command(flatten)]
    pub data: DataArgs,
    /// Stratify by motion tier (needs flows)
    #[arg(long)]
    pub tiers: bool,
    #[arg(long)]
    pub slow_max: Option<f64>,
    #[arg(long)]
    pub medium_max: Option<f64>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Grid and budget as a JSON file with `grid` and `toy` objects
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_parser = order)]
    pub order: Vec<TemporalOrder>,
    #[arg(long, value_delimiter = ',')]
    pub use_flow: Vec<bool>,
    #[arg(long, value_delimiter = ',', value_parser = integration)]
    pub integration: Vec<Integration>,
    #[arg(long, value_delimiter = ',', value_parser = size_variant)]
    pub size_variant: Vec<SizeVariant>,
    #[arg(long, value_delimiter = ',')]
    pub residual_learning: Vec<bool>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub train_sequences: Option<usize>,
    #[arg(long)]
    pub test_sequences: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value = "B")]
    pub protocol: String,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Inspect a saved model instead of a config
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    /// LR input height for the compute estimate
    #[arg(long, default_value_t = 120)]
    pub height: usize,
    /// LR input width for the compute estimate
    #[arg(long, default_value_t = 160)]
    pub width: usize,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// JSON report written by eval or ablate
    #[arg(long)]
    pub report: PathBuf,
    /// Output SVG path (defaults to <out-dir>/plot.svg)
    #[arg(long)]
    pub out: Option<PathBuf>,
}
