//! A labeled toy dataset of noisy pure tones.
//!
//! Class `k` is a sine at `200 * 2^(k/3)` Hz (third-octave steps), so
//! neighbouring classes fall in different 64-band mel bins while the added
//! white noise keeps single frames from being trivially clean.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{encode_wav, AudioClip, AudioError, ENCODER_RATE_HZ};
use crate::dataset::{DatasetError, DatasetManifest, ManifestEntry};
use crate::rng::{stream, Xorshift64Star};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot create {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub clips_per_class: usize,
    pub clip_seconds: f64,
    /// One tone per class.
    pub class_frequencies_hz: Vec<f64>,
    pub snr_db: f64,
    /// Peak amplitude of the tone before noise.
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::with_classes(10)
    }
}

/// `200 * 2^(k/3)` Hz for `k = 0..n`.
pub fn third_octave_tones(n: usize) -> Vec<f64> {
    (0..n).map(|k| 200.0 * 2f64.powf(k as f64 / 3.0)).collect()
}

pub fn class_name(class: usize) -> String {
    format!("tone{class:02}")
}

pub fn clip_id(class: usize, clip: usize) -> String {
    format!("tone{class:02}.{clip:05}")
}

impl SyntheticSpec {
    pub fn with_classes(n_classes: usize) -> Self {
        Self {
            n_classes,
            clips_per_class: 30,
            clip_seconds: 3.0,
            class_frequencies_hz: third_octave_tones(n_classes),
            snr_db: 20.0,
            amplitude: 0.5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: String| Err(SyntheticError::Invalid(m));
        if self.n_classes == 0 || self.clips_per_class == 0 {
            return bad("need at least one class and one clip per class".into());
        }
        if self.class_frequencies_hz.len() != self.n_classes {
            return bad(format!(
                "{} frequencies for {} classes",
                self.class_frequencies_hz.len(),
                self.n_classes
            ));
        }
        let nyquist = f64::from(ENCODER_RATE_HZ) / 2.0;
        if let Some(f) = self
            .class_frequencies_hz
            .iter()
            .find(|f| !(f.is_finite() && **f > 0.0 && **f < nyquist))
        {
            return bad(format!("frequency {f} Hz outside (0, {nyquist})"));
        }
        if !(self.clip_seconds.is_finite() && self.clip_seconds > 0.0) {
            return bad(format!("clip length {} s", self.clip_seconds));
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite".into());
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return bad(format!("amplitude {} outside (0, 1]", self.amplitude));
        }
        Ok(())
    }

    pub fn samples_per_clip(&self) -> usize {
        (self.clip_seconds * f64::from(ENCODER_RATE_HZ)).round() as usize
    }

    /// Standard deviation of the white noise: signal power `A^2 / 2` over
    /// `10^(snr/10)`.
    pub fn noise_std(&self) -> f64 {
        let signal_power = self.amplitude * self.amplitude / 2.0;
        (signal_power / 10f64.powf(self.snr_db / 10.0)).sqrt()
    }

    /// Samples of one clip, before 16-bit quantization.
    pub fn render(&self, class: usize, clip: usize) -> Result<AudioClip, SyntheticError> {
        self.validate()?;
        if class >= self.n_classes || clip >= self.clips_per_class {
            return Err(SyntheticError::Invalid(format!(
                "clip ({class}, {clip}) outside the synthetic dataset"
            )));
        }
        let item = (class * self.clips_per_class + clip) as u64;
        let mut rng = Xorshift64Star::for_item(self.seed, stream::SYNTHETIC, item);
        let phase = rng.uniform(0.0, TAU);
        let step = TAU * self.class_frequencies_hz[class] / f64::from(ENCODER_RATE_HZ);
        let sigma = self.noise_std();
        let samples = (0..self.samples_per_clip())
            .map(|n| {
                let v = self.amplitude * (step * n as f64 + phase).sin() + sigma * rng.normal();
                v.clamp(-1.0, 1.0) as f32
            })
            .collect();
        Ok(AudioClip::new(
            clip_id(class, clip),
            samples,
            ENCODER_RATE_HZ,
        )?)
    }
}

/// Writes `<root>/toneKK/toneKK.JJJJJ.wav` for every clip plus
/// `<root>/manifest.csv`, and returns the manifest.
pub fn generate(
    spec: &SyntheticSpec,
    root: impl AsRef<Path>,
) -> Result<DatasetManifest, SyntheticError> {
    spec.validate()?;
    let root = root.as_ref();
    let genres: Vec<String> = (0..spec.n_classes).map(class_name).collect();
    for g in &genres {
        let dir = root.join(g);
        std::fs::create_dir_all(&dir).map_err(|source| SyntheticError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    let jobs: Vec<(usize, usize)> = (0..spec.n_classes)
        .flat_map(|c| (0..spec.clips_per_class).map(move |j| (c, j)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(class, clip)| {
            let audio = spec.render(class, clip)?;
            let path: PathBuf = root
                .join(&genres[class])
                .join(format!("{}.wav", audio.clip_id));
            encode_wav(&audio, &path)?;
            Ok(ManifestEntry {
                clip_id: audio.clip_id,
                path,
                label: class,
            })
        })
        .collect::<Result<Vec<_>, SyntheticError>>()?;
    let manifest = DatasetManifest { entries, genres };
    manifest.write_csv(root.join(MANIFEST_FILE), root, None)?;
    Ok(manifest)
}
