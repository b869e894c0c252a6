use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use genreprobe::dataset::make_folds;
use genreprobe::evaluation::{
    best_layers, cross_validate, render_confusion, render_report, BestLayers, CrossValidation,
    EvalConfig, EvaluationReport, ReportFormat, StoreFeatures,
};
use genreprobe::mlp::{write_head, TrainingLog};
use genreprobe::store::FeatureStore;
use genreprobe::AggregationRule;
use rayon::prelude::*;

use crate::backend::scan;
use crate::config::{Backend, LayerSelection, RunConfig};
use crate::{emit, pool, CommonArgs, TrainArgs};

pub const REPORT_MD: &str = "report.md";
pub const REPORT_CSV: &str = "report.csv";
pub const SPLITS_CSV: &str = "splits.csv";
pub const BEST_LAYERS_CSV: &str = "best_layers.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const LABELS_FILE: &str = "labels.txt";

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Feature root to read from.
    #[arg(long, value_name = "DIR")]
    pub features: Option<PathBuf>,
    /// Directory for reports, splits, heads and the resolved config.
    #[arg(long = "out", value_name = "DIR")]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

impl EvaluateArgs {
    pub fn resolve(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        self.common.apply(&mut cfg);
        self.train.apply(&mut cfg);
        if let Some(v) = &self.features {
            cfg.features = v.clone();
        }
        if let Some(v) = &self.output {
            cfg.output = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The configured store name, or the only model directory under the root.
fn model_id(cfg: &RunConfig) -> Result<String> {
    if let Some(id) = &cfg.model_id {
        return Ok(id.clone());
    }
    if cfg.backend == Backend::Logmel {
        if let Some(id) = cfg.default_model_id() {
            if cfg.features.join(&id).is_dir() {
                return Ok(id);
            }
        }
    }
    let mut dirs: Vec<String> = std::fs::read_dir(&cfg.features)
        .with_context(|| format!("reading feature root {}", cfg.features.display()))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().map(str::to_owned))
        .collect();
    dirs.sort();
    match dirs.as_slice() {
        [only] => Ok(only.clone()),
        [] => bail!(
            "no features under {}; run extract first",
            cfg.features.display()
        ),
        _ => bail!(
            "several models under {} ({}); choose one with --model-id",
            cfg.features.display(),
            dirs.join(", ")
        ),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn render_log(log: &TrainingLog) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for e in &log.epochs {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.epoch, e.train_loss, e.val_loss, e.val_accuracy
        );
    }
    out
}

fn render_best(best: &BestLayers) -> String {
    let mut out = format!("metric,layer\nsegments,{}\n", best.segment);
    for rule in AggregationRule::ALL {
        let _ = writeln!(out, "{rule},{}", best.clip[rule.index()]);
    }
    out
}

fn write_run(out: &Path, run: &CrossValidation) -> Result<()> {
    let r = &run.report;
    let k = r.layer;
    for (fold, result) in r.folds.iter().enumerate() {
        for rule in AggregationRule::ALL {
            let path = out
                .join("confusion")
                .join(format!("layer{k}_fold{fold}_{rule}.csv"));
            write(
                &path,
                &render_confusion(&result.confusion[rule.index()], &r.genres),
            )?;
        }
    }
    for (fold, (head, log)) in run.heads.iter().zip(&run.logs).enumerate() {
        let path = out.join("heads").join(format!("layer{k}_fold{fold}.gph"));
        std::fs::create_dir_all(out.join("heads"))?;
        write_head(head, &path).with_context(|| format!("writing {}", path.display()))?;
        write(
            &out.join("logs").join(format!("layer{k}_fold{fold}.csv")),
            &render_log(log),
        )?;
    }
    Ok(())
}

pub fn run(cfg: &RunConfig, quiet: bool) -> Result<()> {
    let dataset = cfg
        .dataset
        .as_deref()
        .context("evaluate needs --dataset <DIR>")?;
    let manifest = scan(dataset)?;
    let model_id = model_id(cfg)?;
    let store = FeatureStore::new(&cfg.features);
    let available = store
        .layers(&model_id)
        .with_context(|| format!("no features for {model_id}; run extract first"))?;
    let layers = cfg.layers.resolve(&available);
    if layers.is_empty() {
        bail!("no layers to evaluate for {model_id}");
    }
    let folds = make_folds(&manifest, cfg.folds_seed)?;
    let source = StoreFeatures::new(store, model_id.clone());
    let eval_cfg = EvalConfig {
        train: cfg.train.clone(),
        protocol: cfg.protocol,
    };
    if !quiet {
        eprintln!(
            "evaluating {model_id} layers {layers:?} on {} clips ({} genres)",
            manifest.len(),
            manifest.num_classes()
        );
    }

    // Layers are independent; each is deterministic on its own, so the pool
    // size changes wall time only.
    let runs: Vec<CrossValidation> = pool(cfg.jobs)?.install(|| {
        layers
            .par_iter()
            .map(|&layer| {
                let run = cross_validate(&source, &manifest, &folds, &model_id, layer, &eval_cfg)
                    .with_context(|| format!("evaluating {model_id} layer {layer}"))?;
                if !quiet {
                    eprintln!("layer {layer} done");
                }
                Ok(run)
            })
            .collect::<Result<_>>()
    })?;
    let reports: Vec<EvaluationReport> = runs.iter().map(|r| r.report.clone()).collect();
    let best = best_layers(&reports)?;

    let out = &cfg.output;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let markdown = render_report(&reports, ReportFormat::Markdown)?;
    write(&out.join(REPORT_MD), &markdown)?;
    write(
        &out.join(REPORT_CSV),
        &render_report(&reports, ReportFormat::Csv)?,
    )?;
    write(&out.join(BEST_LAYERS_CSV), &render_best(&best))?;
    manifest
        .write_csv(out.join(SPLITS_CSV), dataset, Some(&folds))
        .context("writing splits")?;
    write(
        &out.join("heads").join(LABELS_FILE),
        &(manifest.genres.join("\n") + "\n"),
    )?;
    for run in &runs {
        write_run(out, run)?;
    }
    let resolved = RunConfig {
        model_id: Some(model_id),
        layers: LayerSelection::List(layers),
        ..cfg.clone()
    };
    resolved.write(&out.join(CONFIG_FILE))?;

    let mut text = format!("{markdown}\nbest layer (segments): {}\n", best.segment);
    for rule in AggregationRule::ALL {
        let _ = writeln!(text, "best layer ({rule}): {}", best.clip[rule.index()]);
    }
    emit(&text)
}
