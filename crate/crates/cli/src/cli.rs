use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use grouplift::mmd::Estimator;

#[derive(Debug, Parser)]
#[command(name = "grouplift", version, about = "Grouped multi-label training and MMD-based attribute transfer")]
pub struct Cli {
    /// TOML file with `[train]` and `[data]` sections; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic source/target pair with planted attribute groups.
    GenData(GenDataArgs),
    /// Cluster attributes by label correlation and assign loss weights.
    Group(GroupArgs),
    /// Train the multi-label network.
    TrainMnet(TrainMnetArgs),
    /// Adapt one attribute head to an unlabeled target domain.
    Transfer(Box<TransferArgs>),
    /// MK-MMD between two feature sets.
    Mmd(MmdArgs),
    /// Per-attribute accuracy of one or more checkpoints, side by side.
    Eval(EvalArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct GenDataArgs {
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub target_samples: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Planted group sizes, e.g. `2,3,1`.
    #[arg(long, value_delimiter = ',')]
    pub group_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub rho_in: Option<f64>,
    #[arg(long)]
    pub rho_out: Option<f64>,
    #[arg(long)]
    pub shift: Option<f64>,
    /// Target rotation in degrees.
    #[arg(long)]
    pub rotation: Option<f64>,
    #[arg(long)]
    pub feature_noise: Option<f64>,
    /// Per-group feature amplitude, e.g. `1,1,0.3`.
    #[arg(long, value_delimiter = ',')]
    pub group_signal: Option<Vec<f64>>,
    /// Also split the source into parts with these fractions, e.g. `0.8,0.2`.
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightScheme {
    /// Each group shares an equal slice of the total weight.
    Grouped,
    /// Every attribute weighs 1.
    Equal,
    /// One group weighs `--high`, the rest `--low`.
    Emphasized,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct GroupArgs {
    /// Labeled CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of groups.
    #[arg(long)]
    pub groups: usize,
    /// Grouping file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "grouped")]
    pub weights: WeightScheme,
    /// Group favoured by `--weights emphasized` (0-based, as printed).
    #[arg(long, required_if_eq("weights", "emphasized"))]
    pub group: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub high: f64,
    #[arg(long, default_value_t = 0.1)]
    pub low: f64,
}

#[derive(Debug, Clone, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub trunk_units: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub head_units: Option<Vec<usize>>,
    /// Run several seeds concurrently, e.g. `seeds=0..4` (inclusive).
    #[arg(long, value_parser = parse_sweep)]
    pub sweep: Option<SeedRange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedRange {
    pub first: u64,
    pub last: u64,
}

fn parse_sweep(s: &str) -> Result<SeedRange, String> {
    let range = s
        .strip_prefix("seeds=")
        .ok_or_else(|| format!("expected `seeds=a..b`, got `{s}`"))?;
    let (a, b) = range
        .split_once("..")
        .ok_or_else(|| format!("expected `seeds=a..b`, got `{s}`"))?;
    let first = a.trim().parse().map_err(|_| format!("bad seed `{a}`"))?;
    let last = b.trim().parse().map_err(|_| format!("bad seed `{b}`"))?;
    if last < first {
        return Err(format!("empty seed range {first}..{last}"));
    }
    Ok(SeedRange { first, last })
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct TrainMnetArgs {
    /// Labeled training CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Grouping file; its weights are used, or derived from its groups.
    /// Without it every attribute weighs 1.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Labeled CSV scored after training.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Per-epoch metrics CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Summary report file (also printed).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlphaPolicy {
    /// 1.0 for attributes in the same group, 0.1 otherwise.
    Grouped,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct TransferArgs {
    /// Multi-label checkpoint to start from.
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled source CSV.
    #[arg(long)]
    pub source: PathBuf,
    /// Target CSV; label columns, if any, are used for evaluation only.
    #[arg(long)]
    pub target: PathBuf,
    /// Source attribute whose head is adapted.
    #[arg(long)]
    pub source_attr: String,
    /// Target attribute, scored when the target file has its labels.
    #[arg(long)]
    pub target_attr: String,
    /// Weight of the source classification loss.
    #[arg(long, conflicts_with = "alpha_policy")]
    pub alpha: Option<f64>,
    #[arg(long, value_enum, requires = "groups")]
    pub alpha_policy: Option<AlphaPolicy>,
    /// Grouping file consulted by `--alpha-policy`.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Leading trunk layers held fixed; defaults to half the trunk.
    #[arg(long)]
    pub freeze_depth: Option<usize>,
    /// Layer indices, trunk layers first then head layers.
    #[arg(long, value_delimiter = ',')]
    pub mmd_layers: Option<Vec<usize>>,
    /// Per-layer weights of the MMD penalties, parallel to `--mmd-layers`.
    #[arg(long, value_delimiter = ',')]
    pub mmd_multipliers: Option<Vec<f64>>,
    /// Bandwidths as multiples of the median pairwise distance.
    #[arg(long, value_delimiter = ',')]
    pub kernel_scales: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    /// Adapted single-head checkpoint to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch metrics CSV.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Summary report file (also printed).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory for per-layer activation CSVs of both domains.
    #[arg(long)]
    pub dump_embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Biased,
    Unbiased,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Biased => Estimator::Biased,
            EstimatorArg::Unbiased => Estimator::Unbiased,
        }
    }
}

#[derive(Debug, Args)]
pub struct MmdArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Bandwidths as multiples of the median pairwise distance.
    #[arg(long, value_delimiter = ',')]
    pub kernel_scales: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorArg>,
    /// Permutations for a p-value; 0 skips the test.
    #[arg(long, default_value_t = 0)]
    pub permutations: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoints to compare; repeat the flag.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Column labels, parallel to `--model`; defaults to file stems.
    #[arg(long = "label")]
    pub labels: Vec<String>,
    /// Accuracy table CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = grouplift::gradcheck::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = grouplift::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
}
