#![allow(dead_code)]

pub mod oracles;

use genreprobe::dataset::{DatasetManifest, ManifestEntry};
use genreprobe::encoders::FeatureMatrix;
use genreprobe::rng::Xorshift64Star;

/// `n` clips per class named `c{class}.{k}`, labels in class order.
pub fn manifest(classes: usize, per_class: usize) -> DatasetManifest {
    let mut entries = Vec::new();
    for c in 0..classes {
        for k in 0..per_class {
            entries.push(ManifestEntry {
                clip_id: format!("c{c}.{k:03}"),
                path: format!("c{c}/{k}.wav").into(),
                label: c,
            });
        }
    }
    DatasetManifest {
        entries,
        genres: (0..classes).map(|c| format!("g{c}")).collect(),
    }
}

/// One-hot of the true label on every frame.
pub fn one_hot_features(m: &DatasetManifest, frames: usize) -> Vec<FeatureMatrix> {
    let c = m.num_classes();
    m.entries
        .iter()
        .map(|e| {
            let mut v = vec![0.0f32; frames * c];
            for f in 0..frames {
                v[f * c + e.label] = 1.0;
            }
            FeatureMatrix::new(&e.clip_id, "oracle", 0, c, 20, v).unwrap()
        })
        .collect()
}

/// Standard-normal features unrelated to the labels.
pub fn noise_features(
    m: &DatasetManifest,
    frames: usize,
    dim: usize,
    seed: u64,
) -> Vec<FeatureMatrix> {
    m.entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut rng = Xorshift64Star::for_item(seed, 99, i as u64);
            let v = (0..frames * dim).map(|_| rng.normal() as f32).collect();
            FeatureMatrix::new(&e.clip_id, "noise", 0, dim, 20, v).unwrap()
        })
        .collect()
}
