use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{bail, Context, Result};
use clap::Args;
use genreprobe::audio::load_for_encoder;
use genreprobe::store::FeatureStore;
use rayon::prelude::*;

use crate::backend::{open_encoder, scan};
use crate::config::RunConfig;
use crate::{emit, pool, CommonArgs};

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    /// Feature root to write into.
    #[arg(long = "out", visible_alias = "features", value_name = "DIR")]
    pub features: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

impl ExtractArgs {
    pub fn resolve(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        self.common.apply(&mut cfg);
        if let Some(v) = &self.features {
            cfg.features = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Default)]
struct Tally {
    cached: AtomicUsize,
    extracted: AtomicUsize,
    done: AtomicUsize,
}

pub fn run(cfg: &RunConfig, quiet: bool) -> Result<()> {
    let dataset = cfg
        .dataset
        .as_deref()
        .context("extract needs --dataset <DIR>")?;
    let manifest = scan(dataset)?;
    let encoder = open_encoder(cfg, None)?;
    let handle = encoder.handle();
    let model_id = cfg
        .model_id
        .clone()
        .unwrap_or_else(|| handle.model_id.clone());
    let available: Vec<u16> = match handle.block_layers() {
        blocks if !blocks.is_empty() => blocks,
        _ => handle.dims.keys().copied().collect(),
    };
    let layers = cfg.layers.resolve(&available);
    for &layer in &layers {
        if handle.dim(layer).is_none() {
            bail!(
                "{} has no layer {layer} (available: {:?})",
                handle.model_id,
                handle.dims.keys().collect::<Vec<_>>()
            );
        }
    }
    let store = FeatureStore::new(&cfg.features);
    let total = manifest.len();
    let tally = Tally::default();
    log::info!("extracting layers {layers:?} of {model_id} for {total} clips");

    pool(cfg.jobs)?.install(|| {
        manifest
            .entries
            .par_iter()
            .try_for_each(|entry| -> Result<()> {
                let missing: Vec<u16> = layers
                    .iter()
                    .copied()
                    .filter(|&l| !store.contains(&model_id, l, &entry.clip_id))
                    .collect();
                let hits = layers.len() - missing.len();
                if !missing.is_empty() {
                    let mut clip = load_for_encoder(&entry.path)
                        .with_context(|| format!("loading clip {}", entry.clip_id))?;
                    clip.clip_id = entry.clip_id.clone();
                    let matrices = encoder
                        .extract_layers(&clip, &missing)
                        .with_context(|| format!("extracting clip {}", entry.clip_id))?;
                    for mut m in matrices {
                        m.model_id = model_id.clone();
                        store
                            .put(&m)
                            .with_context(|| format!("storing clip {}", entry.clip_id))?;
                    }
                }
                tally.cached.fetch_add(hits, Ordering::Relaxed);
                tally.extracted.fetch_add(missing.len(), Ordering::Relaxed);
                let done = tally.done.fetch_add(1, Ordering::Relaxed) + 1;
                if !quiet {
                    eprintln!(
                        "[{done}/{total}] {}: {} extracted, {hits} cached",
                        entry.clip_id,
                        missing.len()
                    );
                }
                Ok(())
            })
    })?;

    let resolved = RunConfig {
        model_id: Some(model_id.clone()),
        layers: crate::LayerSelection::List(layers),
        ..cfg.clone()
    };
    resolved.write(&store.root().join(&model_id).join(CONFIG_FILE))?;
    emit(&format!(
        "{} cached, {} extracted\n",
        tally.cached.into_inner(),
        tally.extracted.into_inner()
    ))
}
