//! `sapiens-desk`: data generation, curation, MAE pretraining, task
//! fine-tuning, evaluation, inference and reporting at desk scale.
//!
//! Exit status is 0 on success, 2 on configuration errors and 1 on runtime
//! or I/O failures.

mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sapiens_core::datagen::{SceneKind, DEFAULT_MIN_BOX, DEFAULT_MIN_SCORE};
use sapiens_core::heads::Task;
use sapiens_core::trainer::Precision;

use commands::{Common, EvalArgs};
use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "sapiens-desk", version, about = "Desk-scale human-centric vision models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Random seed (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long)]
    out: PathBuf,
    /// Replace existing outputs instead of failing.
    #[arg(long)]
    overwrite: bool,
    /// Run on a single worker thread.
    #[arg(long)]
    deterministic: bool,
    /// Arithmetic precision for training and inference.
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    s.parse().map_err(|e: sapiens_core::Error| e.to_string())
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: sapiens_core::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    /// Multi-person 64x64 scenes for pretraining.
    Pretrain,
    /// Single-person 64x48 crops with labels for fine-tuning.
    Finetune,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset with images and all labels.
    GenData {
        #[arg(long, default_value_t = 256)]
        count: usize,
        #[arg(long, value_enum, default_value = "pretrain")]
        kind: Kind,
        /// Image height (defaults to the kind's standard size).
        #[arg(long, requires = "width")]
        height: Option<usize>,
        /// Image width.
        #[arg(long, requires = "height")]
        width: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Filter a manifest by detector score and box size.
    Curate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_SCORE)]
        min_score: f64,
        #[arg(long, default_value_t = DEFAULT_MIN_BOX)]
        min_box: f64,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Masked-autoencoder pretraining.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fine-tune an encoder and task head.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Score predictions (or a checkpoint) against ground truth; writes a metric CSV.
    Eval {
        /// pose, seg, depth or normal (required with --pred).
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        /// Ground-truth manifest.
        #[arg(long)]
        gt: PathBuf,
        /// Prediction manifest, paired with ground truth by id.
        #[arg(long, conflicts_with = "checkpoint")]
        pred: Option<PathBuf>,
        /// Fine-tuned checkpoint to run on the ground-truth images.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Config supplying `eval.*` protocol overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Average with horizontally mirrored predictions.
        #[arg(long)]
        flip_test: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write per-image predictions and a prediction manifest.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        flip_test: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Reconstruction PSNR of a pretrained model across masking ratios.
    MaskSweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.75,0.85,0.95")]
        ratios: Vec<f64>,
        /// Number of manifest images to use.
        #[arg(long, default_value_t = 20)]
        limit: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Render CSV files as SVG charts.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::GenData { common, .. }
            | Command::Curate { common, .. }
            | Command::Pretrain { common, .. }
            | Command::Finetune { common, .. }
            | Command::Eval { common, .. }
            | Command::Infer { common, .. }
            | Command::MaskSweep { common, .. }
            | Command::Report { common, .. } => common,
        }
    }
}

/// Sizes the global worker pool from `--deterministic` and `SAPIENS_DESK_THREADS`.
fn init_threads(deterministic: bool) -> Result<()> {
    let threads = match std::env::var("SAPIENS_DESK_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => return Err(CliError::Config(format!("SAPIENS_DESK_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => None,
    };
    let threads = if deterministic { Some(1) } else { threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let a = cli.command.common();
    init_threads(a.deterministic)?;
    let c = Common {
        seed: a.seed,
        out: a.out.clone(),
        overwrite: a.overwrite,
        precision: a.precision,
    };
    match &cli.command {
        Command::GenData { count, kind, height, width, .. } => {
            let kind = match kind {
                Kind::Pretrain => SceneKind::Pretrain,
                Kind::Finetune => SceneKind::Finetune,
            };
            commands::gen_data(&c, *count, kind, height.zip(*width))
        }
        Command::Curate { manifest, min_score, min_box, .. } => commands::curate(&c, manifest, *min_score, *min_box),
        Command::Pretrain { config, .. } => commands::pretrain(&c, config),
        Command::Finetune { config, .. } => commands::finetune(&c, config),
        Command::Eval { task, gt, pred, checkpoint, config, flip_test, .. } => commands::eval(
            &c,
            &EvalArgs {
                task: *task,
                gt,
                pred: pred.as_deref(),
                checkpoint: checkpoint.as_deref(),
                config: config.as_deref(),
                flip_test: *flip_test,
            },
        ),
        Command::Infer { checkpoint, manifest, config, flip_test, .. } => {
            commands::infer(&c, checkpoint, manifest, config.as_deref(), *flip_test)
        }
        Command::MaskSweep { checkpoint, manifest, ratios, limit, .. } => {
            commands::mask_sweep_cmd(&c, checkpoint, manifest, ratios, *limit)
        }
        Command::Report { input, .. } => commands::report(&c, input),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
