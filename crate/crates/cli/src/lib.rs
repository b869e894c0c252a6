//! The `genreprobe` command line: `synth`, `extract`, `evaluate`, `predict`.
//!
//! Data goes to standard output, progress and diagnostics to standard error.

mod backend;
pub mod config;
mod evaluate;
mod extract;
mod predict;
mod synth;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use genreprobe::dataset::FoldProtocol;

pub use config::{Backend, LayerSelection, RunConfig, CACHE_ENV};
pub use evaluate::EvaluateArgs;
pub use extract::ExtractArgs;
pub use predict::PredictArgs;
pub use synth::SynthArgs;

#[derive(Debug, Parser)]
#[command(
    name = "genreprobe",
    version,
    about = "Genre classification probes over audio-encoder layers"
)]
pub struct Cli {
    /// TOML file with run settings; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only errors on standard error.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a labeled dataset of noisy tones.
    Synth(SynthArgs),
    /// Compute features for every clip and cache them as `.gpf` files.
    Extract(ExtractArgs),
    /// Cross-validate MLP heads on cached features and write reports.
    Evaluate(EvaluateArgs),
    /// Classify one audio file with a trained head.
    Predict(PredictArgs),
}

/// Flags shared by `extract` and `evaluate`; each one overrides the config
/// file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Dataset root laid out as `<root>/<genre>/*.wav`.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    /// Exported ONNX encoder (`model` backend).
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Feature root to import from (`precomputed` backend).
    #[arg(long, value_name = "DIR")]
    pub source: Option<PathBuf>,
    /// Store name of the features.
    #[arg(long)]
    pub model_id: Option<String>,
    /// `all` or a comma-separated list such as `6,12,18,24`.
    #[arg(long)]
    pub layers: Option<LayerSelection>,
    /// Mel bands of the `logmel` backend.
    #[arg(long)]
    pub n_mels: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl CommonArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = &self.dataset {
            cfg.dataset = Some(v.clone());
        }
        if let Some(v) = self.backend {
            cfg.backend = v;
        }
        if let Some(v) = &self.model {
            cfg.model = Some(v.clone());
        }
        if let Some(v) = &self.source {
            cfg.source = Some(v.clone());
        }
        if let Some(v) = &self.model_id {
            cfg.model_id = Some(v.clone());
        }
        if let Some(v) = &self.layers {
            cfg.layers = v.clone();
        }
        if let Some(v) = self.n_mels {
            cfg.n_mels = v;
        }
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
    }
}

/// Training and split flags of `evaluate`.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// Seed of head initialization, shuffling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the three-way clip split.
    #[arg(long)]
    pub folds_seed: Option<u64>,
    /// Train on two sets and validate on a 10% slice of them.
    #[arg(long)]
    pub train_two_sets: bool,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.folds_seed {
            cfg.folds_seed = v;
        }
        if self.train_two_sets {
            cfg.protocol = FoldProtocol::TrainTwoSets;
        }
        if let Some(v) = self.max_epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = self.patience {
            cfg.train.patience = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.train.learning_rate = v;
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    RunConfig::load(cli.config.as_deref(), |k| std::env::var(k).ok())
}

/// A thread pool of `jobs` workers (0 = one per core).
fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("starting worker pool")
}

/// Writes command output to standard output.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

/// True when `e` comes from writing to a closed pipe (as in `| head`).
pub fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

pub fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, 2) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("GENREPROBE_LOG")
        .format_timestamp(None)
        .try_init();
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(args) => synth::run(args, cli.quiet),
        Command::Extract(args) => {
            let cfg = args.resolve(load_config(&cli)?)?;
            extract::run(&cfg, cli.quiet)
        }
        Command::Evaluate(args) => {
            let cfg = args.resolve(load_config(&cli)?)?;
            evaluate::run(&cfg, cli.quiet)
        }
        Command::Predict(args) => predict::run(args, &load_config(&cli)?),
    }
}
