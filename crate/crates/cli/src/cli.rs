//! Command-line surface: global flags and the six subcommands.

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use gridcast_core::Split;

use crate::config::HyperFlags;

#[derive(Debug, Parser)]
#[command(
    name = "gridcast",
    version,
    about = "Graph-learning radar nowcasting: synthesize, train, predict, score."
)]
pub struct Cli {
    /// Seed for all randomness; overrides the config file's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Flat TOML config whose keys mirror the training-config fields.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Directory receiving artifacts and the run manifest.
    #[arg(long, global = true, value_name = "DIR", default_value = "gridcast-out")]
    pub out_dir: PathBuf,

    /// Narrate progress on stderr.
    #[arg(long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a drifting-storm reflectivity sequence as a raster stack.
    Generate(GenerateArgs),
    /// Train a nowcasting model on a raster stack.
    Train(TrainArgs),
    /// Forecast one frame with a trained model.
    Predict(PredictArgs),
    /// Score a checkpoint or the input-mean baseline on held-out windows.
    Evaluate(EvaluateArgs),
    /// Train at one and at five input channels and compare error and cost.
    AblateChannels(AblateArgs),
    /// Dump a checkpoint's learned adjacency matrix as dense CSV.
    ExportGraph(ExportGraphArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Grid width in pixels.
    #[arg(long, default_value_t = 160)]
    pub width: usize,
    /// Grid height in pixels.
    #[arg(long, default_value_t = 160)]
    pub height: usize,
    /// Number of frames.
    #[arg(long, default_value_t = 600)]
    pub frames: usize,
    /// Number of storm cells.
    #[arg(long, default_value_t = 6)]
    pub blobs: usize,
    /// Drift in pixels per frame, x component.
    #[arg(long, default_value_t = 1.6)]
    pub velocity_x: f64,
    /// Drift in pixels per frame, y component.
    #[arg(long, default_value_t = 0.7)]
    pub velocity_y: f64,
    /// Rotation around the domain center, radians per frame.
    #[arg(long, default_value_t = 0.0015)]
    pub rotation: f64,
    /// Standard deviation of additive noise, in reflectivity units.
    #[arg(long, default_value_t = 0.5)]
    pub noise_dbz: f64,
    /// Output raster path (default: <out-dir>/synthetic.rdr).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Raster stack to train on.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Checkpoint path (default: <out-dir>/model.ckpt).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperFlags,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Trained checkpoint.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Raster stack supplying the input window.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Forecast window index (0-based, in time order).
    #[arg(long, default_value_t = 0)]
    pub t_index: usize,
    /// Output raster path (default: <out-dir>/prediction.rdr).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineKind {
    /// Repeat the per-cell mean of the input window.
    InputMean,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["checkpoint", "baseline"])))]
pub struct EvaluateArgs {
    /// Trained checkpoint to score.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Score a parameter-free reference instead of a checkpoint.
    #[arg(long, value_enum, value_name = "KIND")]
    pub baseline: Option<BaselineKind>,
    /// Raster stack to score on.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Horizons to score, comma separated (default: the effective config's).
    #[arg(long, value_delimiter = ',')]
    pub horizon: Option<Vec<usize>>,
    /// Rain/no-rain event threshold in mm/h.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Cells with normalized truth below this are excluded from error means.
    #[arg(long, default_value_t = 1e-3)]
    pub mask_floor: f32,
    /// Report MAE/RMSE in physical units instead of normalized ones.
    #[arg(long)]
    pub denormalize: bool,
    /// Chronological split to score.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Forecast windows per forward pass.
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Metrics CSV path (default: <out-dir>/metrics.csv); the power
    /// spectrum lands next to it.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Raster stack to train on.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Comparison CSV path (default: <out-dir>/ablation.csv).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperFlags,
}

#[derive(Debug, Args)]
pub struct ExportGraphArgs {
    /// Trained checkpoint to read the graph from.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Adjacency CSV path (default: <out-dir>/adjacency.csv); a .txt
    /// sidecar lists the graph hyperparameters.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}
