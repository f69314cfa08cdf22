//! `coam` command-line tool: synthetic data, training, matching and
//! evaluation.

mod commands;
mod config;
mod viz;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(thiserror::Error, Debug)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] coam::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("missing files for pairs: {}", .0.join(", "))]
    MissingPairs(Vec<String>),
}

#[derive(Parser, Debug)]
#[command(name = "coam", version, about = "Conditioned descriptors with co-attention")]
pub struct Cli {
    /// Run configuration (TOML). Flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long, global = true, env = "COAM_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Homography,
    Twoview,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LogTime {
    /// Wall-clock seconds since the start of training.
    Wall,
    /// A `-` placeholder, for byte-identical logs.
    None,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network on a homography dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        steps: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = LogTime::Wall)]
        log_time: LogTime,
    },
    /// Match two images with a trained checkpoint.
    Match {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        img1: PathBuf,
        #[arg(long)]
        img2: PathBuf,
        #[arg(long, default_value_t = 128)]
        grid: usize,
        #[arg(long, default_value_t = 2000)]
        topk: usize,
        #[arg(long)]
        refine: bool,
        #[arg(long)]
        out: PathBuf,
        /// Directory for match-overlay and attention PNGs.
        #[arg(long)]
        viz: Option<PathBuf>,
        /// Pixel `x,y` in image 1 whose attention is drawn.
        #[arg(long)]
        query_point: Option<String>,
        /// Also write the dense descriptor and distinctiveness maps.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Fraction of correct matches over pixel thresholds.
    EvalHomography {
        #[arg(long)]
        matches: PathBuf,
        #[arg(long = "H")]
        h: PathBuf,
        #[arg(long, default_value = "1,2,3,4,5,6,7,8,9,10")]
        thresholds: String,
        /// Curve file to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Relative-pose accuracy from matches and ground-truth poses.
    EvalPose {
        #[arg(long)]
        matches_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean L1 distance between descriptors of ground-truth correspondences.
    Invariance {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
