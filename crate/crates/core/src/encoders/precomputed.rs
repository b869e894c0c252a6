//! Backend serving features that were computed elsewhere and saved as `.gpf`.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Encoder, EncoderError, EncoderHandle, FeatureMatrix};
use crate::audio::AudioClip;
use crate::framing::FrameSpec;
use crate::store::{io_err, FeatureStore, FEATURE_EXTENSION};

/// Looks features up by clip id; the clip's samples are never touched.
#[derive(Debug, Clone)]
pub struct PrecomputedEncoder {
    store: FeatureStore,
    handle: EncoderHandle,
}

fn first_feature_file(dir: &Path) -> Result<Option<std::path::PathBuf>, EncoderError> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == FEATURE_EXTENSION))
        .collect();
    files.sort();
    Ok(files.into_iter().next())
}

impl PrecomputedEncoder {
    /// Opens `<root>/<model_id>/layer*/`, reading one file per layer to learn
    /// its width.
    pub fn open(root: impl AsRef<Path>, model_id: &str) -> Result<Self, EncoderError> {
        let store = FeatureStore::new(root.as_ref());
        let model_dir = store.root().join(model_id);
        if !model_dir.is_dir() {
            return Err(EncoderError::MissingModel {
                path: model_dir.display().to_string(),
            });
        }
        let mut dims = BTreeMap::new();
        for layer in store.layers(model_id)? {
            let dir = model_dir.join(format!("layer{layer}"));
            if let Some(file) = first_feature_file(&dir)? {
                let m = crate::store::read_features(&file)?;
                dims.insert(layer, m.dim);
            }
        }
        if dims.is_empty() {
            return Err(EncoderError::Capability {
                path: model_dir.display().to_string(),
                reason: "no layer directories with feature files".into(),
            });
        }
        let layer_count = dims.keys().copied().max().unwrap_or(0).max(1);
        Ok(Self {
            store,
            handle: EncoderHandle {
                model_id: model_id.to_owned(),
                layer_count,
                dims,
                frame_spec: FrameSpec::default(),
            },
        })
    }

    pub fn store(&self) -> &FeatureStore {
        &self.store
    }
}

impl Encoder for PrecomputedEncoder {
    fn handle(&self) -> &EncoderHandle {
        &self.handle
    }

    fn extract_layers(
        &self,
        clip: &AudioClip,
        layers: &[u16],
    ) -> Result<Vec<FeatureMatrix>, EncoderError> {
        layers
            .iter()
            .map(|&layer| {
                if !self.handle.dims.contains_key(&layer) {
                    return Err(EncoderError::LayerOutOfRange {
                        model_id: self.handle.model_id.clone(),
                        layer,
                        layer_count: self.handle.layer_count,
                    });
                }
                let m = self
                    .store
                    .get(&self.handle.model_id, layer, &clip.clip_id)?;
                Ok(m)
            })
            .collect()
    }
}
