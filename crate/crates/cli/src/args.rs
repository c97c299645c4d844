use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "floeformer", version, about = "Sea ice concentration with a Bayesian Transformer: data, training, uncertainty, fusion")]
pub struct Cli {
    /// key=value file supplying flag values; flags on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads (default: FLOEFORMER_THREADS, else all cores)
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Floating-point precision for training and inference
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic multi-sensor chips with truth and weak labels
    GenData(GenDataArgs),
    /// Train a deterministic, Bayesian or dropout network
    Train(TrainArgs),
    /// Write per-chip mean and uncertainty fields
    Predict(PredictArgs),
    /// Layer per-sensor fields into priority mosaics
    Fuse(FuseArgs),
    /// Per-class uncertainty and accuracy tables against the truth
    Evaluate(EvaluateArgs),
    /// Render fields and mosaics of an evaluation as graymaps
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Deterministic,
    Bayesian,
    Dropout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Bbb,
    McDropout,
    EpochEnsemble,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SensorSel {
    All,
    Sentinel1,
    Rcm,
    Amsr2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitSel {
    All,
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FuseMode {
    Priority,
    LowestUncertainty,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of scenes; every scene is rendered by all three sensors
    #[arg(long, default_value_t = 100)]
    pub scenes: usize,
    /// Chip side in pixels
    #[arg(long, default_value_t = 64)]
    pub side: usize,
    /// Master seed; every scene derives its own stream from it
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.7)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    pub test_frac: f64,
    /// Output directory (created if missing)
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Weight treatment: point estimates, Gaussian posteriors, or point estimates with dropout
    #[arg(long, value_enum, default_value_t = Mode::Bayesian)]
    pub mode: Mode,
    /// Training epochs
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Seed for initialisation, shuffling, dropout and weight sampling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for best.bin, snap_<epoch>.bin and loss_curve.csv
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Train on one sensor's chips or on all of them pooled
    #[arg(long, value_enum, default_value_t = SensorSel::All)]
    pub sensor: SensorSel,
    /// Chips per optimizer step
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Learning rate of the adaptive-moment optimizer
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Weight of the KL term (default: 1 / number of training chips)
    #[arg(long)]
    pub kl_scale: Option<f64>,
    /// Dropout probability for --mode dropout
    #[arg(long, default_value_t = 0.1)]
    pub dropout_p: f64,
    /// Keep a snapshot every N epochs
    #[arg(long, default_value_t = 5)]
    pub snapshot_stride: usize,
    /// Loss weight of open-water pixels
    #[arg(long, default_value_t = 1.0)]
    pub ow_weight: f64,
    /// Loss weight of pack-ice pixels
    #[arg(long, default_value_t = 1.0)]
    pub pack_weight: f64,
    /// Loss weight of marginal-ice-zone pixels
    #[arg(long, default_value_t = 0.5)]
    pub miz_weight: f64,
    /// Initial posterior spread for --mode bayesian
    #[arg(long, default_value_t = 0.05)]
    pub sigma_init: f64,
    /// Feature width per patch
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    /// Attention heads; must divide --hidden
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Number of GloFormer/LoFormer stages
    #[arg(long, default_value_t = 4)]
    pub repeats: usize,
    /// Tokens per chip side
    #[arg(long, default_value_t = 4)]
    pub token_grid: usize,
    /// Patches per token side; the patch side follows from the chip side
    #[arg(long, default_value_t = 4)]
    pub token_side: usize,
    /// Drop the residual connections around attention blocks
    #[arg(long)]
    pub no_residual: bool,
    /// Drop layer normalisation
    #[arg(long)]
    pub no_norm: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint file, or a training directory (snapshots) for epoch-ensemble
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Stochastic passes per chip (bbb, mc-dropout)
    #[arg(long, default_value_t = 32)]
    pub samples: usize,
    /// Dataset directory written by gen-data
    #[arg(long, value_name = "DIR")]
    pub chips: PathBuf,
    /// Output directory for the .field files
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Seed for the stochastic passes
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SensorSel::All)]
    pub sensor: SensorSel,
    #[arg(long, value_enum, default_value_t = SplitSel::Test)]
    pub split: SplitSel,
    /// Dropout probability for mc-dropout (default: the checkpoint's)
    #[arg(long)]
    pub dropout_p: Option<f64>,
    /// Chips per forward pass
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Directory holding sentinel1 fields (top layer)
    #[arg(long, value_name = "DIR")]
    pub s1: Option<PathBuf>,
    /// Directory holding rcm fields
    #[arg(long, value_name = "DIR")]
    pub rcm: Option<PathBuf>,
    /// Directory holding amsr2 fields (bottom layer)
    #[arg(long, value_name = "DIR")]
    pub amsr2: Option<PathBuf>,
    /// Output directory for the .mosaic files
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// priority: S1 over RCM over AMSR2; lowest-uncertainty: least uncertain covering sensor
    #[arg(long, value_enum, default_value_t = FuseMode::Priority)]
    pub mode: FuseMode,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of fields and/or mosaics
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    /// Dataset directory holding the truth
    #[arg(long, value_name = "DIR")]
    pub truth: PathBuf,
    /// Output directory for table1.csv and table2.csv
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by evaluate
    #[arg(long, value_name = "DIR")]
    pub eval: PathBuf,
    /// Output directory for the .pgm maps
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}
