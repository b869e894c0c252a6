//! Running exported encoders through the ONNX runtime, checked against a
//! straight-loop evaluation of the same network.
#![cfg(feature = "onnx")]

use genreprobe::audio::AudioClip;
use genreprobe::encoders::model_fixture::{tiny_encoder_bytes, TinyEncoder};
use genreprobe::encoders::{load_encoder, EncoderError};
use genreprobe::rng::Xorshift64Star;

const TOL: f32 = 1e-4;

fn clip(samples: usize, seed: u64) -> AudioClip {
    let mut rng = Xorshift64Star::new(seed);
    let s: Vec<f32> = (0..samples)
        .map(|_| rng.uniform(-0.5, 0.5) as f32)
        .collect();
    AudioClip::new("c0", s, 16_000).unwrap()
}

/// Every hidden state of `enc` for `x`, frame by frame.
fn reference(enc: &TinyEncoder, x: &[f32]) -> Vec<Vec<Vec<f32>>> {
    let (window, stride, d) = (400, 320, enc.dim);
    let frames = (x.len() - window) / stride + 1;
    let mut h: Vec<Vec<f32>> = (0..frames)
        .map(|f| {
            let seg = &x[f * stride..f * stride + window];
            (0..d)
                .map(|c| {
                    let w = &enc.conv[c * window..(c + 1) * window];
                    enc.conv_bias[c] + seg.iter().zip(w).map(|(a, b)| a * b).sum::<f32>()
                })
                .collect()
        })
        .collect();
    let mut layers = vec![h.clone()];
    for w in &enc.blocks {
        h = h
            .iter()
            .map(|row| {
                (0..d)
                    .map(|j| (0..d).map(|i| row[i] * w[i * d + j]).sum::<f32>().tanh())
                    .collect()
            })
            .collect();
        layers.push(h.clone());
    }
    layers
}

fn write_model(dir: &std::path::Path, enc: &TinyEncoder, stacked: bool) -> std::path::PathBuf {
    let path = dir.join(if stacked {
        "stacked.onnx"
    } else {
        "per_layer.onnx"
    });
    std::fs::write(&path, tiny_encoder_bytes(enc, "tiny", stacked)).unwrap();
    path
}

#[test]
fn matches_reference_for_both_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let enc = TinyEncoder::new(3, 6, 17);
    let c = clip(16_000, 4);
    let want = reference(&enc, &c.samples);
    for stacked in [true, false] {
        let model = load_encoder(write_model(dir.path(), &enc, stacked)).unwrap();
        let h = model.handle();
        assert_eq!(h.model_id, "tiny");
        assert_eq!(h.block_layers(), vec![1, 2, 3]);
        let got = model.extract_layers(&c, &[3, 0, 2]).unwrap();
        assert_eq!(
            got.iter().map(|m| m.layer_index).collect::<Vec<_>>(),
            vec![3, 0, 2]
        );
        for m in &got {
            assert_eq!(m.frames(), 49);
            assert_eq!(m.dim, 6);
            assert_eq!(m.stride_ms, 20);
            for (f, row) in m.rows().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let r = want[usize::from(m.layer_index)][f][j];
                    assert!(
                        (v - r).abs() < TOL,
                        "stacked={stacked} layer {} [{f}][{j}]: {v} vs {r}",
                        m.layer_index
                    );
                }
            }
        }
    }
}

#[test]
fn any_clip_length_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let enc = TinyEncoder::new(2, 4, 3);
    let model = load_encoder(write_model(dir.path(), &enc, false)).unwrap();
    for n in [400, 719, 720, 48_000] {
        let c = clip(n, n as u64);
        let a = model.extract_layers(&c, &[1, 2]).unwrap();
        let b = model.extract_layers(&c, &[1, 2]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].frames(), (n - 400) / 320 + 1);
    }
}

#[test]
fn shared_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let enc = TinyEncoder::new(2, 4, 5);
    let model = load_encoder(write_model(dir.path(), &enc, true)).unwrap();
    let c = clip(8_000, 9);
    let serial = model.extract_layers(&c, &[2]).unwrap();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .map(|_| s.spawn(|| model.extract_layers(&c, &[2]).unwrap()))
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), serial);
        }
    });
}

#[test]
fn request_errors() {
    let dir = tempfile::tempdir().unwrap();
    let model = load_encoder(write_model(dir.path(), &TinyEncoder::new(2, 4, 1), true)).unwrap();
    assert!(matches!(
        model.extract_layers(&clip(8_000, 1), &[3]),
        Err(EncoderError::LayerOutOfRange { layer: 3, .. })
    ));
    assert!(matches!(
        model.extract_layers(&clip(399, 1), &[1]),
        Err(EncoderError::TooShort { .. })
    ));
    let wrong_rate = AudioClip::new("c", vec![0.0; 8_000], 22_050).unwrap();
    assert!(matches!(
        model.extract_layers(&wrong_rate, &[1]),
        Err(EncoderError::SampleRate { .. })
    ));
    assert!(model
        .extract_layers(&clip(8_000, 1), &[])
        .unwrap()
        .is_empty());
}
