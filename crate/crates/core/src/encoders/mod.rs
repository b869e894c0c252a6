//! Feature-extraction backends.
//!
//! Every backend maps an [`AudioClip`] at 16 kHz to one [`FeatureMatrix`] per
//! requested layer, with one row per 20 ms segment. Layer 0 is the
//! convolutional front-end output; layers `1..=layer_count` are the
//! transformer blocks in order.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::audio::{AudioClip, ENCODER_RATE_HZ};
use crate::framing::FrameSpec;

mod logmel;
mod model;
#[cfg(feature = "onnx")]
mod onnx;
mod precomputed;

pub use logmel::{mel_band_centers_hz, reference_logmel, LogMelEncoder, LOG_FLOOR};
pub use model::{
    fixture as model_fixture, inspect_model, inspect_model_bytes, HiddenStateLayout, ModelInfo,
};
#[cfg(feature = "onnx")]
pub use onnx::OnnxEncoder;
pub use precomputed::PrecomputedEncoder;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("clip {clip_id} is at {found} Hz, encoders need {expected} Hz")]
    SampleRate {
        clip_id: String,
        found: u32,
        expected: u32,
    },
    #[error("clip {clip_id} has {samples} samples, shorter than one {window}-sample window")]
    TooShort {
        clip_id: String,
        samples: usize,
        window: usize,
    },
    #[error("layer {layer} not available from {model_id} (has {layer_count} layers)")]
    LayerOutOfRange {
        model_id: String,
        layer: u16,
        layer_count: u16,
    },
    #[error("model file {path} not found")]
    MissingModel { path: String },
    #[error("model {path} cannot be used: {reason}")]
    Capability { path: String, reason: String },
    #[error("inference failed: {0}")]
    Inference(String),
    #[error("invalid feature matrix: {0}")]
    InvalidMatrix(String),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
}

/// Frames x dim features of one clip at one encoder layer, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub clip_id: String,
    pub model_id: String,
    pub layer_index: u16,
    pub dim: usize,
    pub stride_ms: u32,
    pub values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(
        clip_id: impl Into<String>,
        model_id: impl Into<String>,
        layer_index: u16,
        dim: usize,
        stride_ms: u32,
        values: Vec<f32>,
    ) -> Result<Self, EncoderError> {
        let m = Self {
            clip_id: clip_id.into(),
            model_id: model_id.into(),
            layer_index,
            dim,
            stride_ms,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.dim == 0 {
            return Err(EncoderError::InvalidMatrix("dim must be positive".into()));
        }
        if !self.values.len().is_multiple_of(self.dim) {
            return Err(EncoderError::InvalidMatrix(format!(
                "{} values is not a multiple of dim {}",
                self.values.len(),
                self.dim
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(EncoderError::InvalidMatrix(format!(
                "non-finite value at row {}, column {}",
                i / self.dim,
                i % self.dim
            )));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn row(&self, frame: usize) -> &[f32] {
        &self.values[frame * self.dim..(frame + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim)
    }
}

/// What a loaded encoder can produce.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderHandle {
    pub model_id: String,
    pub layer_count: u16,
    /// Output width of every addressable layer.
    pub dims: BTreeMap<u16, usize>,
    pub frame_spec: FrameSpec,
}

impl EncoderHandle {
    pub fn dim(&self, layer: u16) -> Option<usize> {
        self.dims.get(&layer).copied()
    }

    /// Transformer-block layers `1..=layer_count` that this handle exposes.
    pub fn block_layers(&self) -> Vec<u16> {
        self.dims.keys().copied().filter(|&l| l >= 1).collect()
    }

    fn check_layers(&self, layers: &[u16]) -> Result<(), EncoderError> {
        for &layer in layers {
            if !self.dims.contains_key(&layer) {
                return Err(EncoderError::LayerOutOfRange {
                    model_id: self.model_id.clone(),
                    layer,
                    layer_count: self.layer_count,
                });
            }
        }
        Ok(())
    }

    /// Common preconditions of `extract_layers`.
    ///
    /// Returns `Ok(false)` when no layer is requested and the caller should
    /// return an empty list.
    pub fn check_request(&self, clip: &AudioClip, layers: &[u16]) -> Result<bool, EncoderError> {
        if clip.sample_rate_hz != ENCODER_RATE_HZ {
            return Err(EncoderError::SampleRate {
                clip_id: clip.clip_id.clone(),
                found: clip.sample_rate_hz,
                expected: ENCODER_RATE_HZ,
            });
        }
        self.check_layers(layers)?;
        if layers.is_empty() {
            return Ok(false);
        }
        if clip.len() < self.frame_spec.window_samples {
            return Err(EncoderError::TooShort {
                clip_id: clip.clip_id.clone(),
                samples: clip.len(),
                window: self.frame_spec.window_samples,
            });
        }
        Ok(true)
    }
}

/// A feature-extraction backend.
///
/// Implementations hold no mutable state across calls, so one instance can
/// serve many threads.
pub trait Encoder: Send + Sync {
    fn handle(&self) -> &EncoderHandle;

    /// One matrix per requested layer, in request order.
    fn extract_layers(
        &self,
        clip: &AudioClip,
        layers: &[u16],
    ) -> Result<Vec<FeatureMatrix>, EncoderError>;
}

/// Opens an exported ONNX encoder.
///
/// The file is validated against the hidden-state contract first, so a model
/// without per-layer outputs is reported as a capability error whether or not
/// this build can execute it.
pub fn load_encoder(path: impl AsRef<Path>) -> Result<Box<dyn Encoder>, EncoderError> {
    let info = inspect_model(path)?;
    #[cfg(feature = "onnx")]
    {
        Ok(Box::new(OnnxEncoder::from_info(info)?))
    }
    #[cfg(not(feature = "onnx"))]
    {
        Err(EncoderError::Capability {
            path: info.path.display().to_string(),
            reason: format!(
                "{} declares {} layers, but this build has no ONNX runtime; \
                 rebuild with `--features onnx` or extract elsewhere and use the precomputed backend",
                info.model_id, info.layer_count
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_validation() {
        assert!(FeatureMatrix::new("c", "m", 0, 3, 20, vec![0.0; 6]).is_ok());
        assert!(FeatureMatrix::new("c", "m", 0, 0, 20, vec![]).is_err());
        assert!(FeatureMatrix::new("c", "m", 0, 4, 20, vec![0.0; 6]).is_err());
        assert!(FeatureMatrix::new("c", "m", 0, 3, 20, vec![0.0, f32::NAN, 0.0]).is_err());
        let empty = FeatureMatrix::new("c", "m", 0, 3, 20, vec![]).unwrap();
        assert_eq!(empty.frames(), 0);
    }

    #[test]
    fn rows_are_row_major() {
        let m = FeatureMatrix::new("c", "m", 0, 2, 20, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(m.rows().count(), 2);
    }
}
