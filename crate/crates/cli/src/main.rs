mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use capsad::{Error, ErrorCategory};
use clap::{Args, Parser, Subcommand};

use config::{RunConfig, Settings};

/// Capsule-network anomaly detection.
#[derive(Parser)]
#[command(name = "capsad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the normal classes and write a checkpoint and loss log.
    Train(RunArgs),
    /// Train, score a balanced test set, and write reports, ROC curves and a reconstruction grid.
    Experiment(RunArgs),
    /// Score PGM or IDX images with a trained checkpoint.
    Score(ScoreArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mnist, fashion-mnist or smallnorb.
    #[arg(long)]
    dataset: Option<String>,
    /// Dataset root directory (default: $CAPSAD_DATA_ROOT, then ./data).
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Comma-separated anomalous classes, e.g. `0,3,5`.
    #[arg(long)]
    anomalous: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Per-class cap on training images.
    #[arg(long)]
    cap: Option<usize>,
    /// Comma-separated score functions: pp, re, re-sq.
    #[arg(long)]
    scores: Option<String>,
    /// Network size: standard or tiny.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace files in an existing output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated score functions: pp, re, re-sq.
    #[arg(long, default_value = "pp")]
    kind: String,
    /// PGM files, IDX image files, or directories of them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> capsad::Result<RunConfig> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        s.set("dataset", self.dataset.as_ref());
        s.set("data_root", self.data_root.as_ref().map(|p| p.display()));
        s.set("anomalous", self.anomalous.as_ref());
        s.set("seed", self.seed);
        s.set("epochs", self.epochs);
        s.set("batch_size", self.batch_size);
        s.set("cap", self.cap);
        s.set("scores", self.scores.as_ref());
        s.set("arch", self.arch.as_ref());
        s.set("out", self.out.as_ref().map(|p| p.display()));
        s.set("overwrite", self.overwrite.then_some(true));
        RunConfig::resolve(&s)
    }
}

fn run(cli: Cli) -> capsad::Result<()> {
    match cli.command {
        Command::Train(args) => commands::train(&args.resolve()?),
        Command::Experiment(args) => commands::experiment(&args.resolve()?),
        Command::Score(args) => {
            let kinds: Vec<String> = args.kind.split(',').map(|k| k.trim().to_string()).collect();
            commands::score(&args.checkpoint, &kinds, &args.inputs)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Runtime => 4,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
