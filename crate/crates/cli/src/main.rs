//! `hashenc`: fit, inspect and analyze hash-encoded images.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "hashenc",
    version,
    about = "Multiresolution hash encodings of images"
)]
pub struct Cli {
    /// Worker threads. Results are identical for any value unless
    /// --unordered is given to `fit`.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Parent directory of run directories.
    #[arg(long, global = true, default_value = "runs")]
    pub runs_dir: PathBuf,
    /// Log at debug level.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, serde::Serialize)]
pub struct GridArgs {
    /// Interpolation order: 2k nodes per axis.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 12)]
    pub levels: usize,
    #[arg(long, default_value_t = 4096)]
    pub table_size: usize,
    #[arg(long, default_value_t = 2)]
    pub features: usize,
    #[arg(long, default_value_t = 4)]
    pub n_min: u32,
    #[arg(long, default_value_t = 346)]
    pub n_max: u32,
}

#[derive(Debug, Args, Clone, serde::Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pixels sampled per image per step.
    #[arg(long, default_value_t = 4096)]
    pub batch: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr_tables: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr_decoder: f64,
    /// Faster gradient reduction whose result depends on scheduling.
    #[arg(long)]
    pub unordered: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit hash tables and a decoder to one or more images.
    Fit {
        /// Input image (PNG or binary PPM). Repeat for shared-decoder mode.
        #[arg(long, required = true)]
        image: Vec<PathBuf>,
        /// per-image or shared-decoder.
        #[arg(long, default_value = "per-image")]
        mode: String,
        /// Output model; with several images `-<i>` is appended to the stem.
        #[arg(long)]
        out: PathBuf,
        /// Store tables and decoder as half floats.
        #[arg(long)]
        f16: bool,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Refine a fitted model's tables on an image.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Keep the decoder fixed and update tables only.
        #[arg(long)]
        freeze_decoder: bool,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a model to an image.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the model's finest resolution.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
    },
    /// Estimate translation between two fields by coordinate descent.
    Flow(FlowArgs),
    /// Diagnostic experiments.
    #[command(subcommand)]
    Analyze(Analyze),
    /// Print a model's configuration, parameter counts and payload sizes.
    ModelInfo {
        #[arg(long)]
        model: PathBuf,
    },
    /// Dump a 1D interpolant and its derivative as CSV.
    Trace {
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Comma-separated vertex values; random when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
        /// Number of random vertex values.
        #[arg(long, default_value_t = 9)]
        vertices: usize,
        #[arg(long, default_value_t = 400)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args, Clone, serde::Serialize)]
pub struct FlowArgs {
    #[arg(long, requires = "model_b", conflicts_with = "image")]
    pub model_a: Option<PathBuf>,
    #[arg(long, requires = "model_a")]
    pub model_b: Option<PathBuf>,
    /// Build a synthetic pair from this image instead of loading models.
    #[arg(long, requires = "shift", required_unless_present = "model_a")]
    pub image: Option<PathBuf>,
    /// Integer shift "dx,dy" applied to --image; also used as ground truth.
    #[arg(long, allow_hyphen_values = true)]
    pub shift: Option<String>,
    /// Steps for fitting the synthetic pair.
    #[arg(long, default_value_t = 500)]
    pub fit_steps: usize,
    /// pixel, patch, image or all.
    #[arg(long, default_value = "image")]
    pub mode: String,
    /// Interpolation order; must match the models when given.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    #[arg(long, default_value_t = 50)]
    pub margin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ground-truth displacement "dx,dy" for EPE.
    #[arg(long, allow_hyphen_values = true)]
    pub truth: Option<String>,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    /// Adam step in pixels.
    #[arg(long, default_value_t = 0.5)]
    pub step_px: f64,
    /// Frame size in pixels; defaults to the models' finest resolution.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Also write an HSV flow visualization per mode.
    #[arg(long)]
    pub vis: bool,
}

#[derive(Debug, Subcommand)]
pub enum Analyze {
    /// Feature divergence between I and translated copies of I.
    Invariance {
        #[arg(long)]
        image: PathBuf,
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "-80,-60,-40,-20,0,20,40,60,80"
        )]
        shifts: Vec<i32>,
        #[arg(long, value_delimiter = ',', default_value = "4,12,16")]
        channels: Vec<usize>,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// PSNR with all, dense-only and hashed-only levels.
    Ablation {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// PSNR against hash table size.
    Sweep {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 8)]
        min_exp: u32,
        #[arg(long, default_value_t = 16)]
        max_exp: u32,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Pooled per-level histograms of table entries.
    Hist {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
    },
    /// Export a level's vertex-to-entry map as a grayscale image.
    IndexMap {
        #[arg(long)]
        level: usize,
        #[command(flatten)]
        grid: GridArgs,
    },
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match commands::execute(&cli, argv) {
        Ok(dir) => {
            eprintln!("run directory: {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(commands::Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
