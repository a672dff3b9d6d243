mod commands;
mod config;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::failure::CliResult;

#[derive(Debug, Parser)]
#[command(
    name = "liftpose",
    version,
    about = "Self-calibrating triangulation and weakly supervised 3D pose lifting"
)]
pub struct Cli {
    /// JSON file with default settings for every command.
    #[arg(long, global = true, env = config::CONFIG_ENV)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-camera scene and its 2D keypoints.
    Synth(SynthArgs),
    /// Estimate relative camera rotations from 2D keypoints.
    Calibrate(CalibrateArgs),
    /// Triangulate gated pseudo ground-truth poses.
    Triangulate(TriangulateArgs),
    /// Train the lifting network.
    Train(TrainArgs),
    /// Lift a single view to 3D.
    Infer(InferArgs),
    /// Compare predicted poses with ground truth.
    Eval(EvalArgs),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Projection {
    Full,
    Weak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMode {
    Standard,
    Adversarial,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    /// Keypoint noise standard deviation, pixels.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub occlusion_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub projection: Option<Projection>,
    #[arg(long)]
    pub focal: Option<f64>,
    /// Scales every joint-angle range of the generated motion.
    #[arg(long)]
    pub amplitude_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub scene_out: PathBuf,
    #[arg(long)]
    pub keypoints_out: PathBuf,
    /// Root-centred camera-frame poses of `--gt-view`, for evaluation or as a real-pose archive.
    #[arg(long)]
    pub gt_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub gt_view: usize,
}

#[derive(Debug, Args)]
pub struct GateArgs {
    #[arg(long)]
    pub gate_mean: Option<f64>,
    #[arg(long)]
    pub gate_joint: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub keypoints: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Scene file; adds rotation errors against its cameras to the report.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub gate: GateArgs,
}

#[derive(Debug, Args)]
pub struct TriangulateArgs {
    #[arg(long)]
    pub keypoints: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Skeleton JSON; defaults to the built-in skeleton named by the keypoint file.
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    #[command(flatten)]
    pub gate: GateArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub keypoints: PathBuf,
    #[arg(long)]
    pub pseudo_gt: Option<PathBuf>,
    /// Calibration report, used for rotations when no pseudo-GT is given.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Comma-separated view ids to train on; all views by default.
    #[arg(long, value_delimiter = ',')]
    pub views: Option<Vec<usize>>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub max_steps_per_epoch: Option<usize>,
    /// Loss terms, e.g. `triang,reproj`.
    #[arg(long, value_delimiter = ',')]
    pub loss: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub camera_correction: Option<Switch>,
    #[arg(long, value_enum)]
    pub confidence_mask: Option<Switch>,
    #[arg(long, value_enum, default_value = "standard")]
    pub mode: TrainMode,
    /// Pose array used as the critic's real distribution in adversarial mode.
    #[arg(long)]
    pub real_poses: Option<PathBuf>,
    #[arg(long)]
    pub critic_lr: Option<f64>,
    #[arg(long)]
    pub n_critic: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub checkpoint_out: PathBuf,
    /// Loss history CSV; defaults to `<checkpoint>.history.csv`.
    #[arg(long)]
    pub history_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub keypoints: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub view: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Loss history CSV from `train`, copied into the report.
    #[arg(long)]
    pub loss_breakdown: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

fn run(args: Vec<String>) -> CliResult<()> {
    let cli = match Cli::try_parse_from(
        std::iter::once("liftpose".to_string()).chain(args.iter().cloned()),
    ) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    commands::dispatch(cli, args)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
