use genreprobe::audio::{decode_wav, encode_wav, load_for_encoder, AudioClip, AudioError};
use hound::{SampleFormat, WavSpec, WavWriter};

fn write_i16(path: &std::path::Path, rate: u32, channels: u16, samples: &[i16]) {
    let spec = WavSpec {
        channels,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).unwrap();
    samples.iter().for_each(|&s| w.write_sample(s).unwrap());
    w.finalize().unwrap();
}

#[test]
fn pcm16_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("blues.00000.wav");
    write_i16(&p, 16_000, 1, &[0, 16384, -32768]);
    let clip = decode_wav(&p).unwrap();
    assert_eq!(clip.clip_id, "blues.00000");
    assert_eq!(clip.samples, vec![0.0, 0.5, -1.0]);
    assert_eq!(clip.sample_rate_hz, 16_000);
}

#[test]
fn stereo_float_is_averaged() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.wav");
    let spec = WavSpec {
        channels: 2,
        sample_rate: 22_050,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(&p, spec).unwrap();
    for s in [0.2f32, 0.6, -0.5, 0.5] {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
    let clip = decode_wav(&p).unwrap();
    assert_eq!(clip.len(), 2);
    assert!((clip.samples[0] - 0.4).abs() < 1e-7);
    assert_eq!(clip.samples[1], 0.0);
}

#[test]
fn truncated_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.wav");
    write_i16(&p, 16_000, 1, &[1; 1000]);
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..30]).unwrap();
    assert!(decode_wav(&p).is_err());
    assert!(matches!(
        decode_wav(dir.path().join("missing.wav")),
        Err(AudioError::Io { .. })
    ));
}

#[test]
fn unsupported_bit_depth() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("24.wav");
    let spec = WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 24,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(&p, spec).unwrap();
    w.write_sample(1000i32).unwrap();
    w.finalize().unwrap();
    assert!(matches!(decode_wav(&p), Err(AudioError::Format { .. })));
}

#[test]
fn sixteen_bit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.wav");
    let samples: Vec<f32> = (-100..100).map(|i| i as f32 / 128.0).collect();
    let clip = AudioClip::new("r", samples.clone(), 16_000).unwrap();
    encode_wav(&clip, &p).unwrap();
    let back = decode_wav(&p).unwrap();
    for (a, b) in samples.iter().zip(&back.samples) {
        assert!((a - b).abs() <= 1.0 / 32768.0);
    }
}

#[test]
fn gtzan_rate_is_resampled_for_the_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.wav");
    write_i16(&p, 22_050, 1, &vec![0; 661_500]);
    let clip = load_for_encoder(&p).unwrap();
    assert_eq!(clip.sample_rate_hz, 16_000);
    assert_eq!(clip.len(), 480_000);
}
