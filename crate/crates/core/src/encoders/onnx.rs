//! Runs an exported encoder with the `tract` ONNX runtime.

use tract_onnx::prelude::*;

use super::model::{HiddenStateLayout, ModelInfo};
use super::{Encoder, EncoderError, EncoderHandle, FeatureMatrix};
use crate::audio::AudioClip;

type Plan = TypedRunnableModel<TypedModel>;

/// An optimized plan with a symbolic waveform length. Plans are immutable, so
/// one encoder serves any number of threads.
pub struct OnnxEncoder {
    info: ModelInfo,
    handle: EncoderHandle,
    plan: Plan,
    /// Layer of each plan output, in output order.
    output_layers: Vec<u16>,
}

impl std::fmt::Debug for OnnxEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxEncoder")
            .field("info", &self.info)
            .finish()
    }
}

impl OnnxEncoder {
    /// Loads and optimizes a model that already passed
    /// [`inspect_model`](super::inspect_model).
    pub fn from_info(info: ModelInfo) -> Result<Self, EncoderError> {
        let cap = |stage: &str, e: TractError| EncoderError::Capability {
            path: info.path.display().to_string(),
            reason: format!("{stage}: {e:#}"),
        };
        let mut model = tract_onnx::onnx()
            .model_for_path(&info.path)
            .map_err(|e| cap("loading", e))?;
        let samples = model.symbols.sym("samples");
        let shape: TVec<TDim> = if info.input_batch_axis {
            tvec![1.into(), samples.into()]
        } else {
            tvec![samples.into()]
        };
        model
            .set_input_fact(0, InferenceFact::dt_shape(f32::datum_type(), shape))
            .map_err(|e| cap("input", e))?;
        let (names, output_layers): (Vec<String>, Vec<u16>) = match &info.layout {
            HiddenStateLayout::Stacked { output, .. } => (vec![output.clone()], vec![]),
            HiddenStateLayout::PerLayer(map) => map.iter().map(|(&l, n)| (n.clone(), l)).unzip(),
        };
        model
            .set_output_names(&names)
            .map_err(|e| cap("outputs", e))?;
        let plan = model
            .into_optimized()
            .and_then(|m| m.into_runnable())
            .map_err(|e| cap("optimizing", e))?;
        Ok(Self {
            handle: info.handle(),
            info,
            plan,
            output_layers,
        })
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn matrix(
        &self,
        clip: &AudioClip,
        layer: u16,
        values: &[f32],
        shape: &[usize],
    ) -> Result<FeatureMatrix, EncoderError> {
        let expected = self.handle.frame_spec.frame_count(clip.len());
        let dim = self.handle.dims[&layer];
        let (frames, width) = match shape {
            [f, d] | [1, f, d] => (*f, *d),
            _ => return Err(self.shape_error(layer, shape)),
        };
        if frames != expected || width != dim || values.len() != frames * dim {
            return Err(EncoderError::InvalidMatrix(format!(
                "{} layer {layer} gave {frames} x {width} for clip {}, expected {expected} x {dim}",
                self.handle.model_id, clip.clip_id
            )));
        }
        FeatureMatrix::new(
            clip.clip_id.clone(),
            self.handle.model_id.clone(),
            layer,
            dim,
            self.handle.frame_spec.stride_ms(clip.sample_rate_hz),
            values.to_vec(),
        )
    }

    fn shape_error(&self, layer: u16, shape: &[usize]) -> EncoderError {
        EncoderError::InvalidMatrix(format!(
            "{} layer {layer}: unexpected output shape {shape:?}",
            self.handle.model_id
        ))
    }
}

impl Encoder for OnnxEncoder {
    fn handle(&self) -> &EncoderHandle {
        &self.handle
    }

    fn extract_layers(
        &self,
        clip: &AudioClip,
        layers: &[u16],
    ) -> Result<Vec<FeatureMatrix>, EncoderError> {
        if !self.handle.check_request(clip, layers)? {
            return Ok(Vec::new());
        }
        let run_err = |e: TractError| EncoderError::Capability {
            path: self.info.path.display().to_string(),
            reason: format!("running on clip {}: {e:#}", clip.clip_id),
        };
        let n = clip.len();
        let shape: &[usize] = if self.info.input_batch_axis {
            &[1, n]
        } else {
            &[n]
        };
        let input = Tensor::from_shape(shape, &clip.samples).map_err(run_err)?;
        let outputs = self.plan.run(tvec![input.into()]).map_err(run_err)?;

        let mut matrices = Vec::with_capacity(layers.len());
        for &layer in layers {
            let m = match &self.info.layout {
                HiddenStateLayout::Stacked { .. } => {
                    let t = &outputs[0];
                    let full = t.shape();
                    let inner = match full {
                        [1, _, f, d] | [_, f, d] => [*f, *d],
                        _ => return Err(self.shape_error(layer, full)),
                    };
                    let values = t.as_slice::<f32>().map_err(run_err)?;
                    let size = inner[0] * inner[1];
                    let start = usize::from(layer) * size;
                    let slice = values
                        .get(start..start + size)
                        .ok_or_else(|| self.shape_error(layer, full))?;
                    self.matrix(clip, layer, slice, &inner)?
                }
                HiddenStateLayout::PerLayer(_) => {
                    let pos = self
                        .output_layers
                        .iter()
                        .position(|&l| l == layer)
                        .ok_or_else(|| self.shape_error(layer, &[]))?;
                    let t = &outputs[pos];
                    self.matrix(
                        clip,
                        layer,
                        t.as_slice::<f32>().map_err(run_err)?,
                        t.shape(),
                    )?
                }
            };
            matrices.push(m);
        }
        Ok(matrices)
    }
}
