mod commands;
mod runlog;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "synthherd", version, about = "Synthetic herd data generation, augmentation and evaluation")]
struct Cli {
    /// Worker threads for per-frame stages.
    #[arg(long, global = true, env = "SYNTHHERD_JOBS")]
    jobs: Option<usize>,
    /// Line-delimited JSON logs on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Place a herd and cameras; writes the scene JSON.
    SceneGen(SceneGenArgs),
    /// Rasterize a scene's cameras into masks, depth and previews.
    Render(RenderArgs),
    /// Build a keypoint manifest from a rendered scene.
    Annotate(AnnotateArgs),
    /// Add crop-and-scale frames for large instances.
    Augment(AugmentArgs),
    /// Split a manifest by video into train and val.
    Split(SplitArgs),
    /// Export labels in another format.
    Convert(ConvertArgs),
    /// Concatenate manifests, optionally remapping schemas.
    Merge(MergeArgs),
    /// Detection mAP50 / mAP per dataset with averages.
    EvalDet(EvalDetArgs),
    /// Keypoint PCK per dataset with averages.
    EvalPose(EvalPoseArgs),
    /// Counts and box-size statistics.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
pub struct SceneGenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 250)]
    pub instances: usize,
    #[arg(long, default_value_t = 3)]
    pub cameras: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1920)]
    pub width: u32,
    #[arg(long, default_value_t = 1080)]
    pub height: u32,
    /// Focal length in pixels.
    #[arg(long, default_value_t = 1400.0)]
    pub focal: f64,
    /// Half-width of the square placement area, meters.
    #[arg(long, default_value_t = 100.0)]
    pub extent: f64,
    #[arg(long, default_value_t = 0.8)]
    pub scale_min: f64,
    #[arg(long, default_value_t = 1.2)]
    pub scale_max: f64,
    #[arg(long, default_value_t = 20.0)]
    pub distance_min: f64,
    #[arg(long, default_value_t = 60.0)]
    pub distance_max: f64,
    #[arg(long, default_value_t = 15.0)]
    pub elevation_min: f64,
    #[arg(long, default_value_t = 90.0)]
    pub elevation_max: f64,
    /// Size of the procedural pose library.
    #[arg(long, default_value_t = 16)]
    pub poses: usize,
    #[arg(long, default_value_t = 0)]
    pub pose_seed: u64,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// File name prefix; defaults to the scene file stem.
    #[arg(long)]
    pub stem: Option<String>,
}

#[derive(Args, Debug)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Directory written by `render`.
    #[arg(long)]
    pub render_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub stem: Option<String>,
    /// Instances whose larger box side is at most this are skipped.
    #[arg(long, default_value_t = 30.0)]
    pub min_dim: f64,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub first_image_id: u64,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Root that image and mask paths are relative to; defaults to the
    /// manifest's directory.
    #[arg(long)]
    pub root: Option<PathBuf>,
    #[arg(long, default_value_t = 5000.0)]
    pub area_threshold: f64,
    #[arg(long, default_value_t = 150)]
    pub max_offset: u32,
    #[arg(long, default_value_t = 1920)]
    pub out_width: u32,
    #[arg(long, default_value_t = 1080)]
    pub out_height: u32,
    #[arg(long, default_value_t = 16)]
    pub min_visible: usize,
    /// Dataset name; defaults to the output file stem.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub val_out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Assign the largest videos first.
    #[arg(long)]
    pub largest_first: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Format {
    Yolo,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Yolo)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct MergeArgs {
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// zebra27, animal17 or boxes.
    #[arg(long)]
    pub target_schema: Option<String>,
    /// Schema mapping JSON files.
    #[arg(long = "mapping")]
    pub mappings: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalDetArgs {
    /// Ground-truth manifest; repeat once per dataset.
    #[arg(long = "gt", required = true)]
    pub gts: Vec<PathBuf>,
    /// Detection results, paired with `--gt` in order.
    #[arg(long = "pred", required = true)]
    pub preds: Vec<PathBuf>,
    /// Row labels; default to manifest names.
    #[arg(long = "name")]
    pub names: Vec<String>,
    /// IoU thresholds averaged into mAP.
    #[arg(long = "iou", value_delimiter = ',')]
    pub ious: Vec<f64>,
    #[arg(long)]
    pub report: PathBuf,
    /// Free-form `key=value` labels copied into the report, such as the
    /// inference image size.
    #[arg(long = "tag")]
    pub tags: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EvalPoseArgs {
    #[arg(long = "gt", required = true)]
    pub gts: Vec<PathBuf>,
    #[arg(long = "pred", required = true)]
    pub preds: Vec<PathBuf>,
    #[arg(long = "name")]
    pub names: Vec<String>,
    /// PCK thresholds as fractions of the larger box side.
    #[arg(long = "alpha", value_delimiter = ',')]
    pub alphas: Vec<f64>,
    /// Drop the thighs and tail start from evaluation.
    #[arg(long)]
    pub filtered: bool,
    /// Score only keypoints labelled visible.
    #[arg(long)]
    pub visible_only: bool,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long = "tag")]
    pub tags: Vec<String>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,
    /// Directory for per-manifest box-ratio CDF CSVs.
    #[arg(long)]
    pub cdf: Option<PathBuf>,
    /// Summary JSON output.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    runlog::init_logging(cli.verbose);
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let args: Vec<String> = std::env::args().skip(1).collect();
    let result = match &cli.command {
        Command::SceneGen(a) => commands::scene_gen(a, &args),
        Command::Render(a) => commands::render(a, &args),
        Command::Annotate(a) => commands::annotate(a, &args),
        Command::Augment(a) => commands::augment(a, &args),
        Command::Split(a) => commands::split(a, &args),
        Command::Convert(a) => commands::convert(a, &args),
        Command::Merge(a) => commands::merge(a, &args),
        Command::EvalDet(a) => commands::eval_det(a, &args),
        Command::EvalPose(a) => commands::eval_pose(a, &args),
        Command::Stats(a) => commands::stats(a, &args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", serde_json::json!({ "error": chain[0], "causes": &chain[1..] }));
            ExitCode::FAILURE
        }
    }
}
