//! `fsgcd`: split, train, evaluate and export embeddings.
//!
//! Exit codes: 0 success, 2 I/O, format or configuration error, 3 degenerate
//! data, 4 shape mismatch.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fsgcd_core::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "fsgcd", version, about = "Few-shot generalized category discovery")]
struct Cli {
    /// Worker threads for parallel kernels (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a split manifest for a feature file.
    Split(SplitArgs),
    /// Run both training stages and write checkpoints and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print metrics as JSON.
    Eval(EvalArgs),
    /// Write embeddings and cluster ids as CSV.
    ExportEmbeddings(ExportArgs),
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Config file with one `key = value` per line.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named split preset (cifar10, cifar100, imagenet100, cub, scars,
    /// herbarium19, synthetic-smoke).
    #[arg(long)]
    preset: Option<String>,
    /// Seed; defaults to $FSGCD_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of classes that are known.
    #[arg(long = "c-l")]
    c_l: Option<f64>,
    /// Fraction of each known class that is labeled.
    #[arg(long = "p-l")]
    p_l: Option<f64>,
    /// Any config key, e.g. `--set tau_s=0.1`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    /// Manifest path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Feature file; may be omitted when the config defines a synthetic set.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Split manifest; generated from the split ratios when omitted.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Pre-extracted augmented views, row-aligned with the features.
    #[arg(long)]
    views: Option<PathBuf>,
    /// Frozen block weights to load into the encoder.
    #[arg(long)]
    frozen_block: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    stage2_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Stage-two epochs between evaluations (0: first and last only).
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Comma-separated loss terms: asl, ucl, ktl, al, or all.
    #[arg(long)]
    components: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    /// Cluster count; differs from the class count only with a warning.
    #[arg(long)]
    k: Option<usize>,
    /// Score every sample instead of the unlabeled pool.
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Export every sample instead of the unlabeled pool.
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    common: Common,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Input => 2,
        ErrorKind::Degenerate => 3,
        ErrorKind::Shape => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::ExportEmbeddings(a) => commands::export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
