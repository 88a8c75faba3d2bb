//! `mscale` command-line tool: dataset generation, training, evaluation,
//! prediction, ablations and the gradient-check suite.

mod commands;
mod dump;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mscale::Error;

/// Exit codes.
const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "mscale", version, about = "Multi-scale dense prediction: depth, surface normals and semantic labels")]
struct Cli {
    /// Log verbosity (-v info, -vv debug). `RUST_LOG` overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset.
    GenData(GenDataArgs),
    /// Two-phase training on a dataset.
    Train(TrainArgs),
    /// Metric report of a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Write predictions for dataset samples or standalone images.
    Predict(PredictArgs),
    /// Scale-subset or input-condition comparison under a shared budget.
    Ablate(AblateArgs),
    /// Finite-difference check of every primitive, loss and tiny model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Training samples.
    #[arg(long)]
    count: usize,
    /// Test samples.
    #[arg(long, default_value_t = 0)]
    test: usize,
    /// Image size WxH.
    #[arg(long, default_value = "64x48")]
    size: String,
    /// Class count including the ground class.
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset directory (default `$MSCALE_OUT/data`).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Model and training settings shared by `train` and `ablate`. Flags
/// override `--config` and `--set` overrides both.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// key=value run configuration (`model.*`, `train.*`, `augment.*`,
    /// `data.*`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// depth, normals, semantic or depth+normals.
    #[arg(long)]
    task: Option<String>,
    /// Class count of the semantic task (default: the dataset's).
    #[arg(long)]
    classes: Option<usize>,
    /// Active scales, e.g. `1,2` or `1,2,3`.
    #[arg(long)]
    scales: Option<String>,
    /// Input modalities, e.g. `rgb` or `rgb,depth,normals`.
    #[arg(long)]
    inputs: Option<String>,
    /// auto (desk scale), canonical, vgg or tiny.
    #[arg(long)]
    preset: Option<String>,
    /// Channel width multiplier.
    #[arg(long)]
    width: Option<f64>,
    /// Base learning rate (default: the task preset).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    steps1: Option<u64>,
    #[arg(long)]
    steps2: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Semantic loss weighting: none or median-freq.
    #[arg(long)]
    reweight: Option<String>,
    /// Disable data augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory (default `$MSCALE_OUT/train`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Trained checkpoint.
    #[arg(long, required_unless_present = "ground_truth")]
    checkpoint: Option<PathBuf>,
    /// Score the ground truth itself for this task instead of a model.
    #[arg(long, value_name = "TASK")]
    ground_truth: Option<String>,
    #[arg(long)]
    data: PathBuf,
    /// train or test.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Also write every prediction with a false-color rendering.
    #[arg(long)]
    dump_predictions: bool,
    /// Output directory (default `$MSCALE_OUT/eval`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory to predict on.
    #[arg(long, conflicts_with = "image")]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Binary PPM images at the model's input size.
    #[arg(long, required_unless_present = "data")]
    image: Vec<PathBuf>,
    /// Output directory (default `$MSCALE_OUT/predict`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Semicolon-separated scale subsets.
    #[arg(long, default_value = "1;2;1,2;1,2,3")]
    scale_sets: String,
    /// Compare input conditions instead of scale subsets: a (RGB only),
    /// b (RGB plus predicted depth and normals), c (RGB plus true depth and
    /// normals).
    #[arg(long)]
    conditions: Option<String>,
    /// Depth+normals checkpoint supplying predictions for condition b.
    #[arg(long)]
    donor: Option<PathBuf>,
    /// Training steps per configuration; three-scale models split it evenly
    /// between the phases.
    #[arg(long, default_value_t = 3000)]
    budget: u64,
    /// Split the table is measured on.
    #[arg(long, default_value = "train")]
    split: String,
    /// Output directory (default `$MSCALE_OUT/ablate`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Flip the sign of one op family's backward pass (negative control).
    #[arg(long, value_name = "OP")]
    inject_fault: Option<String>,
}

/// Default output location: `$MSCALE_OUT/<name>`, else `runs/<name>`.
fn out_dir(explicit: Option<PathBuf>, name: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let root = std::env::var_os("MSCALE_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(name)
    })
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Input(_) | Error::Config { .. } => EXIT_USAGE,
        Error::Io(_) | Error::Format { .. } => EXIT_IO,
        Error::Validation(_) | Error::NonFinite { .. } | Error::EmptyMask => EXIT_VERIFY,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a.count, a.test, &a.size, a.classes, a.seed, &out_dir(a.out, "data")),
        Command::Train(a) => commands::train(&a.config, &out_dir(a.out, "train")),
        Command::Eval(a) => commands::eval(
            a.checkpoint.as_deref(),
            a.ground_truth.as_deref(),
            &a.data,
            &a.split,
            a.batch,
            a.dump_predictions,
            &out_dir(a.out, "eval"),
        ),
        Command::Predict(a) => commands::predict(&a.checkpoint, a.data.as_deref(), &a.split, &a.image, &out_dir(a.out, "predict")),
        Command::Ablate(a) => commands::ablate(
            &a.config,
            &a.scale_sets,
            a.conditions.as_deref(),
            a.donor.as_deref(),
            a.budget,
            &a.split,
            &out_dir(a.out, "ablate"),
        ),
        Command::Gradcheck(a) => commands::gradcheck(a.seed, a.inject_fault.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFY),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
