use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use genreprobe::audio::load_for_encoder;
use genreprobe::mlp::{predict_segments, read_head, SegmentPrediction};
use genreprobe::{aggregate, AggregationRule, ClipPrediction};

use crate::backend::open_encoder;
use crate::config::{Backend, RunConfig};
use crate::evaluate::LABELS_FILE;

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// WAV file to classify.
    #[arg(long, value_name = "FILE")]
    pub audio: PathBuf,
    /// Trained head (`.gph`).
    #[arg(long, value_name = "FILE")]
    pub head: PathBuf,
    /// Genre names, one per line; defaults to `labels.txt` beside the head.
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value = "sum")]
    pub rule: AggregationRule,
    /// Encoder layer the head was trained on (0 for log-mel).
    #[arg(long)]
    pub layer: Option<u16>,
    #[arg(long, value_enum)]
    pub backend: Option<Backend>,
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub model_id: Option<String>,
    /// Print a rolling prediction every `--every` segments.
    #[arg(long)]
    pub stream: bool,
    #[arg(long, default_value_t = 50, requires = "stream")]
    pub every: usize,
    /// Segments fused per rolling prediction; defaults to `--every`.
    #[arg(long, requires = "stream")]
    pub window: Option<usize>,
}

fn read_labels(args: &PredictArgs, classes: usize) -> Result<Vec<String>> {
    let path = match &args.labels {
        Some(p) => Some(p.clone()),
        None => args
            .head
            .parent()
            .map(|d| d.join(LABELS_FILE))
            .filter(|p| p.is_file()),
    };
    let Some(path) = path else {
        return Ok((0..classes).map(|c| format!("class{c}")).collect());
    };
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let labels: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect();
    ensure!(
        labels.len() == classes,
        "{} lists {} genres, the head has {classes} classes",
        path.display(),
        labels.len()
    );
    Ok(labels)
}

/// `genre name=score ...` with six decimals.
pub fn format_prediction(p: &ClipPrediction, labels: &[String]) -> String {
    let mut line = labels[p.predicted].clone();
    for (name, score) in labels.iter().zip(&p.scores) {
        let _ = write!(line, " {name}={score:.6}");
    }
    line
}

/// Windows `[end - window, end)` ending at every multiple of `every`.
pub fn stream_windows(segments: usize, every: usize, window: usize) -> Vec<(usize, usize)> {
    (1..=segments / every)
        .map(|i| {
            let end = i * every;
            (end.saturating_sub(window), end)
        })
        .collect()
}

fn clip_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".into())
}

pub fn run(args: &PredictArgs, base: &RunConfig) -> Result<()> {
    let mut cfg = base.clone();
    if let Some(v) = args.backend {
        cfg.backend = v;
    }
    if let Some(v) = &args.model {
        cfg.model = Some(v.clone());
    }
    if let Some(v) = &args.source {
        cfg.source = Some(v.clone());
    }
    if let Some(v) = &args.model_id {
        cfg.model_id = Some(v.clone());
    }
    ensure!(args.every > 0, "--every must be positive");

    let head =
        read_head(&args.head).with_context(|| format!("reading head {}", args.head.display()))?;
    let labels = read_labels(args, head.num_classes())?;
    let layer = match (args.layer, cfg.backend) {
        (Some(l), _) => l,
        (None, Backend::Logmel) => 0,
        (None, _) => bail!("--layer is required with the {} backend", cfg.backend),
    };
    let encoder = open_encoder(&cfg, Some(head.input_dim()))?;
    let mut clip = load_for_encoder(&args.audio)
        .with_context(|| format!("loading {}", args.audio.display()))?;
    clip.clip_id = clip_id(&args.audio);
    let matrix = encoder
        .extract_layers(&clip, &[layer])?
        .pop()
        .context("encoder returned no features")?;
    let preds: Vec<SegmentPrediction> = predict_segments(&head, &matrix)?;
    ensure!(
        !preds.is_empty(),
        "{} produced no segments",
        args.audio.display()
    );

    if args.stream {
        let window = args.window.unwrap_or(args.every);
        ensure!(window > 0, "--window must be positive");
        for (start, end) in stream_windows(preds.len(), args.every, window) {
            let p = aggregate(&preds[start..end], args.rule)?;
            crate::emit(&format!(
                "{start}-{end} {}\n",
                format_prediction(&p, &labels)
            ))?;
        }
        Ok(())
    } else {
        crate::emit(&format!(
            "{}\n",
            format_prediction(&aggregate(&preds, args.rule)?, &labels)
        ))
    }
}
