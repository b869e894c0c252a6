use std::path::Path;

use anyhow::{bail, Context, Result};
use genreprobe::dataset::{scan_dataset, DatasetManifest, GenreSet, ScanOptions};
use genreprobe::encoders::{load_encoder, LogMelEncoder, PrecomputedEncoder};
use genreprobe::Encoder;

use crate::config::{Backend, RunConfig};

/// Opens the configured backend. `n_mels` overrides the configured band
/// count for the log-mel backend.
pub fn open_encoder(cfg: &RunConfig, n_mels: Option<usize>) -> Result<Box<dyn Encoder>> {
    Ok(match cfg.backend {
        Backend::Logmel => Box::new(LogMelEncoder::new(cfg.frame, n_mels.unwrap_or(cfg.n_mels))),
        Backend::Model => {
            let Some(path) = &cfg.model else {
                bail!("the model backend needs --model <FILE>");
            };
            load_encoder(path)?
        }
        Backend::Precomputed => {
            let Some(root) = &cfg.source else {
                bail!("the precomputed backend needs --source <DIR>");
            };
            let Some(id) = &cfg.model_id else {
                bail!("the precomputed backend needs --model-id");
            };
            Box::new(PrecomputedEncoder::open(root, id)?)
        }
    })
}

/// Every subdirectory of `root` is a genre, labels in sorted order.
pub fn scan(root: &Path) -> Result<DatasetManifest> {
    let opts = ScanOptions {
        genres: GenreSet::Infer,
        strict: false,
    };
    scan_dataset(root, &opts).with_context(|| format!("scanning dataset {}", root.display()))
}
