//! `devid`: extract packet features from captures, train and tune a decision
//! tree, predict with individual, aggregated or mixed labelling, and
//! evaluate.

mod commands;
mod files;

use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use devid_core::aggregate::{AggregationConfig, TailRule, DEFAULT_DOMINANCE, DEFAULT_GROUP_SIZE};

#[derive(Parser)]
#[command(name = "devid", version, about = "Packet-level IoT device identification")]
struct Cli {
    /// Seed for every randomised step.
    #[arg(long, global = true, env = "DEVID_SEED", default_value_t = 0)]
    seed: u64,
    /// Directory that relative output paths are written under.
    #[arg(long, global = true, env = "DEVID_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode captures into a labelled feature CSV.
    Extract(ExtractArgs),
    /// Assign whole capture files to train and test.
    Split(SplitArgs),
    /// Train a decision tree.
    Train(TrainArgs),
    /// Random search over tree hyperparameters with group folds.
    Tune(TuneArgs),
    /// Predict device labels for a feature CSV.
    Predict(PredictArgs),
    /// Score predictions against truth labels.
    Evaluate(EvaluateArgs),
    /// Importance voting, then a genetic search over the surviving features.
    SelectFeatures(SelectArgs),
    /// Accuracy and macro-F1 of aggregated labels for a range of group sizes.
    SweepGroupSize(SweepArgs),
    /// Compare session-specific fields under row-level and capture-isolated folds.
    AuditLeakage(AuditArgs),
}

#[derive(Args, Clone)]
struct CatalogueArg {
    /// Feature catalogue file; the built-in catalogue when omitted.
    #[arg(long)]
    catalogue: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LabelSource {
    /// Label by source MAC through the label map.
    Mac,
    /// Label by the capture's directory name, for MACs that carry it in the map.
    Capture,
}

#[derive(Args, Clone)]
struct LabelArgs {
    /// `mac,label,transfer` CSV, or `aalto` for the built-in map.
    #[arg(long)]
    label_map: String,
    #[arg(long, value_enum, default_value_t = LabelSource::Mac)]
    label_source: LabelSource,
    /// `label,group` CSV, or `aalto`, merging labels after assignment.
    #[arg(long)]
    aliases: Option<String>,
    /// Keep at most this many packets per label.
    #[arg(long)]
    cap_per_class: Option<usize>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    pcap_dir: PathBuf,
    #[command(flatten)]
    labels: LabelArgs,
    #[command(flatten)]
    catalogue: CatalogueArg,
    /// Split plan from `split`; requires `--partition`.
    #[arg(long, requires = "partition")]
    split: Option<PathBuf>,
    #[arg(long, requires = "split", value_parser = ["train", "test"])]
    partition: Option<String>,
    /// Keep packets whose MAC is not in the label map.
    #[arg(long)]
    keep_unlabelled: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    pcap_dir: PathBuf,
    /// Share of each device's capture files assigned to train.
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct TreeArgs {
    /// Maximum depth; unlimited when omitted.
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = 2)]
    min_samples_split: usize,
    #[arg(long, default_value_t = 1)]
    min_samples_leaf: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    catalogue: CatalogueArg,
    /// Mask file listing the features to train on.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Tuning result whose best parameters override the tree flags.
    #[arg(long)]
    params: Option<PathBuf>,
    #[command(flatten)]
    tree: TreeArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    catalogue: CatalogueArg,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Configurations sampled from the grid.
    #[arg(long, default_value_t = 20)]
    iters: usize,
    /// Comma-separated depths; `none` means unlimited.
    #[arg(long, default_value = "5,10,15,20,none")]
    max_depths: String,
    #[arg(long, default_value = "2,5,10")]
    min_samples_splits: String,
    #[arg(long, default_value = "1,2,5")]
    min_samples_leaves: String,
    /// Also run nested cross-validation with this many outer folds.
    #[arg(long)]
    nested: Option<usize>,
    /// Train the best configuration on all rows and save it here.
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Individual,
    Aggregated,
    Mixed,
}

impl Method {
    fn column(self) -> &'static str {
        match self {
            Method::Individual => "individual",
            Method::Aggregated => "aggregated",
            Method::Mixed => "mixed",
        }
    }
}

#[derive(Args, Clone)]
struct AggregationArgs {
    /// Packets per aggregation chunk.
    #[arg(long, default_value_t = NonZeroUsize::new(DEFAULT_GROUP_SIZE).expect("non-zero"))]
    g: NonZeroUsize,
    /// Treatment of the last partial chunk of each address.
    #[arg(long, default_value = "process", value_parser = ["process", "unprocessed"])]
    tail: String,
    /// Largest share the top chunk label may hold for an address to count as shared.
    #[arg(long, default_value_t = DEFAULT_DOMINANCE)]
    dominance: f64,
}

impl AggregationArgs {
    fn config(&self) -> AggregationConfig {
        AggregationConfig {
            g: self.g,
            tail: self.tail.parse::<TailRule>().expect("validated by clap"),
            dominance_threshold: self.dominance,
        }
    }
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    catalogue: CatalogueArg,
    #[command(flatten)]
    aggregation: AggregationArgs,
    /// Method copied into the `predicted` column.
    #[arg(long, value_enum, default_value_t = Method::Mixed)]
    method: Method,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// CSV with `capture_id,index,label` columns, such as an extracted feature file.
    #[arg(long)]
    truth: PathBuf,
    /// Predictions file from `predict`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Mixed)]
    method: Method,
    /// `label,group` CSV, or `aalto`, applied to truth and predictions.
    #[arg(long)]
    aliases: Option<String>,
    /// Report CSV; confusion, summary and per-device files are written beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    catalogue: CatalogueArg,
    /// Votes a feature needs to enter the genetic search.
    #[arg(long, default_value_t = 1)]
    min_votes: usize,
    /// Score each label against the rest and count a vote won on any label.
    #[arg(long)]
    one_vs_rest: bool,
    #[arg(long, default_value_t = 10)]
    trees: usize,
    /// Stop after voting; the mask is the voted features.
    #[arg(long)]
    no_ga: bool,
    #[arg(long, default_value_t = 50)]
    population: usize,
    #[arg(long, default_value_t = 30)]
    generations: usize,
    #[arg(long, default_value_t = 0.9)]
    crossover: f64,
    /// Per-bit mutation probability; one over the pool size when omitted.
    #[arg(long)]
    mutation: Option<f64>,
    #[arg(long, default_value_t = 3)]
    tournament: usize,
    /// Share of capture files held out to score candidate masks.
    #[arg(long, default_value_t = 0.25)]
    validation_ratio: f64,
    #[command(flatten)]
    tree: TreeArgs,
    /// Mask file; votes and the search trace are written beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value_t = 1)]
    g_min: usize,
    #[arg(long, default_value_t = 30)]
    g_max: usize,
    #[arg(long, default_value = "process", value_parser = ["process", "unprocessed"])]
    tail: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    pcap_dir: PathBuf,
    #[command(flatten)]
    labels: LabelArgs,
    #[command(flatten)]
    catalogue: CatalogueArg,
    /// Session fields to audit.
    #[arg(long, value_delimiter = ',', default_value = "IP_id,TCP_seq,TCP_ack,sport,dport")]
    fields: Vec<String>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[command(flatten)]
    tree: TreeArgs,
    #[arg(long)]
    out: PathBuf,
}

/// `Type::Variant` of the first library error in the chain.
fn error_name(err: &anyhow::Error) -> String {
    use devid_core::{
        AggregationError, DatasetError, FeatureError, MetricsError, PcapError, SelectError, TreeError,
    };
    fn variant(e: &dyn std::fmt::Debug) -> String {
        let text = format!("{e:?}");
        text.split(|c: char| !c.is_alphanumeric() && c != '_').next().unwrap_or_default().to_string()
    }
    for cause in err.chain() {
        macro_rules! named {
            ($($t:ident),*) => {$(
                if let Some(e) = cause.downcast_ref::<$t>() {
                    return format!("{}::{}", stringify!($t), variant(e));
                }
            )*};
        }
        named!(DatasetError, TreeError, SelectError, MetricsError, AggregationError, FeatureError, PcapError);
    }
    "Error".into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    let ctx = commands::Context { seed: cli.seed, out_dir: cli.out_dir.clone() };
    let result = match cli.command {
        Command::Extract(a) => commands::extract(&ctx, a),
        Command::Split(a) => commands::split(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Tune(a) => commands::tune(&ctx, a),
        Command::Predict(a) => commands::predict(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::SelectFeatures(a) => commands::select_features(&ctx, a),
        Command::SweepGroupSize(a) => commands::sweep(&ctx, a),
        Command::AuditLeakage(a) => commands::audit_leakage(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e:#}", error_name(&e));
            ExitCode::FAILURE
        }
    }
}
