use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "latentgnn", version, about = "Latent-node message passing: verification, benchmarks, FLOP accounting and toy training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check stepwise vs. matrix-form outputs and analytic vs. finite-difference gradients.
    Verify(VerifyArgs),
    /// Time the latent layer and the dense block over a list of graph sizes.
    Bench(BenchArgs),
    /// Print analytic operation and parameter counts.
    Flops(FlopsArgs),
    /// Train a per-node classifier on a synthetic task.
    Train(TrainArgs),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per check.
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    /// Overrides both the equivalence (1e-10) and gradient (1e-6) tolerances.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Per-trial CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BenchVariant {
    Both,
    Latentgnn,
    Dense,
}

#[derive(Debug, Args)]
pub struct ShapeArgs {
    /// Channels `c`.
    #[arg(long)]
    pub c: Option<usize>,
    /// Bottleneck width `c_r`; defaults to `c / 4`.
    #[arg(long)]
    pub cr: Option<usize>,
    /// Latent dims, one per kernel, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub d: Vec<usize>,
    /// Kernel count; a single `--d` value is repeated this many times.
    #[arg(long)]
    pub kernels: Option<usize>,
    /// Dense affinity.
    #[arg(long, default_value = "sim")]
    pub affinity: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Graph sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192,16384,32768,65536")]
    pub n: Vec<usize>,
    #[command(flatten)]
    pub shape: ShapeArgs,
    /// Timed runs per point, after one discarded warmup.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, value_enum, default_value_t = BenchVariant::Both)]
    pub variant: BenchVariant,
    /// Dense runs are skipped above this size.
    #[arg(long, default_value_t = 4096)]
    pub dense_max_n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long, value_delimiter = ',', default_value = "1024,4096,16384")]
    pub n: Vec<usize>,
    #[command(flatten)]
    pub shape: ShapeArgs,
    /// Latent-to-latent affinity kind for the parameter count.
    #[arg(long, default_value = "free")]
    pub latent: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "beacon")]
    pub task: String,
    /// local-only, latentgnn or dense-nl.
    #[arg(long, default_value = "latentgnn")]
    pub variant: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1500)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// sgd or adam.
    #[arg(long, default_value = "adam")]
    pub optimizer: String,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Stage preset name or explicit dims such as `8,8;4`.
    #[arg(long, default_value = "toy")]
    pub stages: String,
    /// Single-stage latent dims; overrides `--stages`.
    #[arg(long, value_delimiter = ',')]
    pub d: Vec<usize>,
    #[arg(long)]
    pub kernels: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 8)]
    pub cr: usize,
    #[arg(long, default_value = "free")]
    pub latent: String,
    /// Affinity of dense-nl blocks.
    #[arg(long, default_value = "lap")]
    pub affinity: String,
    /// Input channels; defaults to `classes + 4` for beacon and 8 for clusters.
    #[arg(long)]
    pub c: Option<usize>,
    /// Beacon grid as `HxW`.
    #[arg(long, default_value = "16x16")]
    pub grid: String,
    /// Points per cloud for the clusters task.
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 2000)]
    pub train_count: u64,
    #[arg(long, default_value_t = 500)]
    pub eval_count: u64,
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    /// Gradient L2 clip; 0 disables.
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    /// Loss-curve CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Weights base path; defaults to `<out>.weights` when `--out` is given.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}
