//! `spcrf`: stage-by-stage and end-to-end superpixel CRF refinement.
//!
//! Exit status is 0 on success, 1 for bad input or arguments, 2 when an
//! internal invariant breaks. Every subcommand computes all of its outputs
//! in memory before writing any file.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::output::CliError;

/// Environment variable naming the default pipeline config file.
pub const CONFIG_ENV: &str = "SPCRF_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "spcrf", version, about = "Superpixel CRF refinement of label probabilities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Over-segment an image into superpixels.
    Slic(SlicArgs),
    /// Average a feature tensor inside each superpixel.
    Pool(PoolArgs),
    /// Build the sparse similarity graph over pooled superpixels.
    Graph(GraphArgs),
    /// Refine a unary tensor with the superpixel CRF.
    Refine(RefineArgs),
    /// Score a label map against ground truth.
    Eval(EvalArgs),
    /// Paint a label map with a palette.
    Colorize(ColorizeArgs),
    /// Write a seeded synthetic scene (image, ground truth, noisy unary).
    Demo(DemoArgs),
    /// Run every stage on one image.
    Pipeline(PipelineArgs),
}

/// Config source shared by the stages that read pipeline settings.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// Pipeline config (JSON).
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SlicArgs {
    #[arg(long)]
    image: PathBuf,
    /// Output superpixel map (SPT1, u32).
    #[arg(long)]
    out: PathBuf,
    /// Target superpixel count.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    compactness: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Grayscale mask (non-zero inside); superpixels are split along it.
    #[arg(long)]
    instance_mask: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct PoolArgs {
    /// Feature tensor (SPT1, f32, K x M' x N').
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    superpixels: PathBuf,
    /// Feature-map stride relative to the image.
    #[arg(long, default_value_t = 1.0)]
    stride: f64,
    /// Output pooled features (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GraphArgs {
    /// Pooled features (JSON, from `pool`).
    #[arg(long)]
    pooled: PathBuf,
    /// Edges kept per group.
    #[arg(long, default_value_t = spcrf::graph::DEFAULT_TOP_K)]
    k: usize,
    /// Same-label classifier (JSON linear model, 1 x (3+1)).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Group id per superpixel (JSON array); graphs never cross groups.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Output edge list (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RefineArgs {
    /// Label probabilities (SPT1, f32, L x M' x N').
    #[arg(long)]
    unary: PathBuf,
    #[arg(long)]
    superpixels: PathBuf,
    /// Term-1 features (SPT1); defaults to the unary itself.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Term-2 features (SPT1); defaults to image colours when --image is given.
    #[arg(long)]
    features2: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    /// Sparse edge list (JSON).
    #[arg(long, conflicts_with = "dense")]
    edges: Option<PathBuf>,
    /// Connect every pair of superpixels.
    #[arg(long)]
    dense: bool,
    #[command(flatten)]
    config: ConfigArgs,
    /// Label count; defaults to the config value, then the unary channels.
    #[arg(long)]
    labels: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Refined label map (.pgm or .png).
    #[arg(long)]
    out: PathBuf,
    /// Inference trace (JSON).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    labels: usize,
    /// Predicted instances (JSON).
    #[arg(long, requires = "gt_instances")]
    pred_instances: Option<PathBuf>,
    /// Ground-truth instances (JSON).
    #[arg(long, requires = "pred_instances")]
    gt_instances: Option<PathBuf>,
    /// AP^r IoU thresholds.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    /// Metric report (JSON); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ColorizeArgs {
    /// Label map (.pgm or .png).
    #[arg(long)]
    input: PathBuf,
    /// Palette (JSON array of [r, g, b]); defaults to the VOC colour map.
    #[arg(long)]
    palette: Option<PathBuf>,
    /// Output image (.ppm or .png).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 7)]
    labels: usize,
    #[arg(long, default_value_t = spcrf::fixture::MODERATE_NOISE)]
    noise: f64,
    /// Directory for image.ppm, gt.pgm and unary.spt.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    unary: PathBuf,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    features2: Option<PathBuf>,
    /// Ground-truth label map; enables metrics.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Grayscale mask (non-zero inside).
    #[arg(long)]
    instance_mask: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    labels: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Directory for superpixels.spt, baseline.pgm, labels.pgm, labels.ppm
    /// and report.json.
    #[arg(long)]
    out_dir: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Slic(a) => commands::slic(a),
        Command::Pool(a) => commands::pool(a),
        Command::Graph(a) => commands::graph(a),
        Command::Refine(a) => commands::refine(a),
        Command::Eval(a) => commands::eval(a),
        Command::Colorize(a) => commands::colorize(a),
        Command::Demo(a) => commands::demo(a),
        Command::Pipeline(a) => commands::pipeline(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(move || run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(2),
    }
}
