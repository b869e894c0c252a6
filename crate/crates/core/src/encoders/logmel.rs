//! Built-in log-mel featurizer standing in for a neural encoder.

use std::collections::BTreeMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{Encoder, EncoderError, EncoderHandle, FeatureMatrix};
use crate::audio::{AudioClip, ENCODER_RATE_HZ};
use crate::framing::FrameSpec;

/// Added to every mel energy before the log.
pub const LOG_FLOOR: f64 = 1e-10;
const MIN_FFT_LEN: usize = 512;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Band edges (`n_mels + 2` points) equally spaced on the HTK mel scale.
fn mel_edges_hz(n_mels: usize, f_max: f64) -> Vec<f64> {
    let top = hz_to_mel(f_max);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Centre frequency of each triangular band spanning 0 Hz to `f_max`.
pub fn mel_band_centers_hz(n_mels: usize, f_max: f64) -> Vec<f64> {
    mel_edges_hz(n_mels, f_max)[1..=n_mels].to_vec()
}

/// Triangular filters over the `fft_len / 2 + 1` power bins, row per band.
fn filterbank(n_mels: usize, fft_len: usize, sample_rate: f64) -> Vec<Vec<f64>> {
    let edges = mel_edges_hz(n_mels, sample_rate / 2.0);
    let n_bins = fft_len / 2 + 1;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sample_rate / fft_len as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Periodic Hann window.
fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / len as f64).cos())
        .collect()
}

/// Log-mel encoder with precomputed window, filterbank and FFT plan.
#[derive(Clone)]
pub struct LogMelEncoder {
    handle: EncoderHandle,
    n_mels: usize,
    fft_len: usize,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LogMelEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelEncoder")
            .field("handle", &self.handle)
            .field("fft_len", &self.fft_len)
            .finish()
    }
}

impl LogMelEncoder {
    pub fn new(spec: FrameSpec, n_mels: usize) -> Self {
        let fft_len = spec.window_samples.next_power_of_two().max(MIN_FFT_LEN);
        let mut dims = BTreeMap::new();
        dims.insert(0, n_mels);
        Self {
            handle: EncoderHandle {
                model_id: format!("logmel{n_mels}"),
                layer_count: 1,
                dims,
                frame_spec: spec,
            },
            n_mels,
            fft_len,
            window: hann(spec.window_samples),
            filters: filterbank(n_mels, fft_len, ENCODER_RATE_HZ as f64),
            fft: FftPlanner::new().plan_fft_forward(fft_len),
        }
    }

    /// Features of every frame, row-major.
    fn compute(&self, samples: &[f32]) -> Vec<f32> {
        let spec = self.handle.frame_spec;
        let frames = spec.frame_count(samples.len());
        let n_bins = self.fft_len / 2 + 1;
        let mut values = Vec::with_capacity(frames * self.n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_len];
        let mut power = vec![0.0f64; n_bins];
        for frame in 0..frames {
            let start = frame * spec.stride_samples;
            let chunk = &samples[start..start + spec.window_samples];
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for ((slot, &s), w) in buf.iter_mut().zip(chunk).zip(&self.window) {
                slot.re = s as f64 * w;
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for filter in &self.filters {
                let energy: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
                values.push((energy + LOG_FLOOR).ln() as f32);
            }
        }
        values
    }
}

impl Encoder for LogMelEncoder {
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
        let values = self.compute(&clip.samples);
        let stride_ms = self.handle.frame_spec.stride_ms(clip.sample_rate_hz);
        layers
            .iter()
            .map(|&layer| {
                FeatureMatrix::new(
                    clip.clip_id.clone(),
                    self.handle.model_id.clone(),
                    layer,
                    self.n_mels,
                    stride_ms,
                    values.clone(),
                )
            })
            .collect()
    }
}

/// Log-mel features of a 16 kHz clip: Hann window, zero-padded FFT, power
/// spectrum, `n_mels` triangular bands over 0-8 kHz, `ln(x + 1e-10)`.
pub fn reference_logmel(
    clip: &AudioClip,
    spec: FrameSpec,
    n_mels: usize,
) -> Result<FeatureMatrix, EncoderError> {
    let encoder = LogMelEncoder::new(spec, n_mels);
    let mut out = encoder.extract_layers(clip, &[0])?;
    Ok(out.remove(0))
}
