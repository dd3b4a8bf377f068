//! Command-line surface. Exit codes: 0 success, 1 failure, 2 usage error.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use harmonic_gan::tensor::Primitive;

pub use commands::run;

pub enum Outcome {
    Success,
    /// The command ran but a check failed.
    Failed,
}

#[derive(Parser, Debug)]
#[command(
    name = "harmonic-gan",
    version,
    about = "Unpaired image translation with a patch-graph smoothness constraint"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render the synthetic two-domain dataset and its manifest.
    GenData(GenDataArgs),
    /// Train both generators and discriminators.
    Train(TrainArgs),
    /// Translate one image with a trained checkpoint.
    Translate(TranslateArgs),
    /// Score both directions on the paired test split.
    Eval(EvalArgs),
    /// Run finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Training images per domain.
    #[arg(long, default_value_t = 400)]
    pub n_train: usize,
    /// Paired test scenes.
    #[arg(long, default_value_t = 100)]
    pub n_test: usize,
    /// Image side in pixels, a multiple of 8.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Probability that a scene contains a lesion.
    #[arg(long, default_value_t = 0.5)]
    pub lesion_prob: f64,
    /// 1 (PGM) or 3 (PPM).
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Seed of the scene renderer.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write into a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ExtractorArg {
    Histogram,
    CnnProxy,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for metrics, checkpoints and samples.
    #[arg(long)]
    pub out: PathBuf,
    /// `key = value` config file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint using its embedded config.
    #[arg(long, conflicts_with_all = ["config", "lambda_smooth", "extractor", "epochs", "seed", "set"])]
    pub resume: Option<PathBuf>,
    /// Weight of the smoothness term (0 gives the plain cycle objective).
    #[arg(long)]
    pub lambda_smooth: Option<f64>,
    /// Patch descriptor for the smoothness graph.
    #[arg(long, value_enum)]
    pub extractor: Option<ExtractorArg>,
    /// Total epochs; the constant-lr phase defaults to half.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for initialization, shuffling, pair sampling and the replay pools.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Any config key, as KEY=VALUE; repeatable.
    #[arg(long, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DirectionArg {
    Ab,
    Ba,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    /// Checkpoint written by train.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input PGM/PPM image.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// ab applies G (domain A to B), ba applies F.
    #[arg(long, value_enum)]
    pub direction: DirectionArg,
    /// Output PGM/PPM path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by train.
    #[arg(long, required_unless_present = "ground_truth", conflicts_with = "ground_truth")]
    pub ckpt: Option<PathBuf>,
    /// Score the ground-truth images against themselves (sanity baseline).
    #[arg(long)]
    pub ground_truth: bool,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Report CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Most similar source patch pairs used by the neighbourhood score.
    #[arg(long, default_value_t = harmonic_gan::eval::DEFAULT_K_TOP)]
    pub k_top: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModuleArg {
    All,
    Tensor,
    Features,
    Smooth,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Which group of cases to run.
    #[arg(long, value_enum, default_value = "all")]
    pub module: ModuleArg,
    /// Random trials per case.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Seed for the random inputs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt one primitive's backward rule, e.g. `conv2d` (test fixture).
    #[arg(long, value_name = "PRIMITIVE", value_parser = parse_primitive)]
    pub inject_fault: Option<Primitive>,
}

fn parse_primitive(name: &str) -> Result<Primitive, String> {
    Primitive::from_name(name).ok_or_else(|| {
        let names: Vec<&str> = Primitive::ALL.iter().map(|p| p.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}
