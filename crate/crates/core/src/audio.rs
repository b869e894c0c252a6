//! WAV ingestion, mono downmix and band-limited resampling.

use std::path::Path;

use thiserror::Error;

/// Sample rate every encoder expects.
pub const ENCODER_RATE_HZ: u32 = 16_000;

/// Taps per polyphase branch.
pub const RESAMPLER_TAPS: usize = 64;
/// Passband edge as a fraction of the lower rate's Nyquist frequency.
pub const RESAMPLER_CUTOFF: f64 = 0.95;
/// Kaiser window shape parameter.
pub const RESAMPLER_KAISER_BETA: f64 = 5.0;

// Above this many phases the kernel is evaluated per output sample instead of
// being tabulated.
const MAX_TABULATED_PHASES: u64 = 8192;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported WAV format in {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("invalid audio clip: {0}")]
    Invalid(String),
}

/// A mono waveform at a known sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub clip_id: String,
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    /// Builds a clip, rejecting non-finite or out-of-range samples.
    pub fn new(
        clip_id: impl Into<String>,
        samples: Vec<f32>,
        sample_rate_hz: u32,
    ) -> Result<Self, AudioError> {
        if sample_rate_hz == 0 {
            return Err(AudioError::Invalid("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(AudioError::Invalid(format!(
                "sample {i} is {} (must be finite and within [-1, 1])",
                samples[i]
            )));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

fn clip_id_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn map_hound(path: &Path, err: hound::Error) -> AudioError {
    let path = path.display().to_string();
    match err {
        hound::Error::IoError(source) => AudioError::Io { path, source },
        other => AudioError::Format {
            path,
            reason: other.to_string(),
        },
    }
}

/// Decodes a 16-bit PCM or 32-bit float WAV with one or two channels.
///
/// Integer samples are scaled by 1/32768, stereo is averaged to mono and the
/// clip keeps the file's native rate. Float samples outside `[-1, 1]` are
/// clamped; non-finite float samples are a format error.
pub fn decode_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let format_err = |reason: String| AudioError::Format {
        path: path.display().to_string(),
        reason,
    };
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(format_err(format!("{channels} channels (expected 1 or 2)")));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => {
            let raw = reader
                .into_samples::<f32>()
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| map_hound(path, e))?;
            if raw.iter().any(|s| !s.is_finite()) {
                return Err(format_err("non-finite float sample".into()));
            }
            raw.into_iter()
                .map(|s| (s as f64).clamp(-1.0, 1.0))
                .collect()
        }
        (fmt, bits) => {
            return Err(format_err(format!("{bits}-bit {fmt:?} samples")));
        }
    };
    if !interleaved.len().is_multiple_of(channels) {
        return Err(AudioError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "partial sample frame"),
        });
    }

    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| (frame.iter().sum::<f64>() / channels as f64) as f32)
        .collect();
    Ok(AudioClip {
        clip_id: clip_id_from_path(path),
        samples,
        sample_rate_hz: spec.sample_rate,
    })
}

/// Writes a clip as mono 16-bit little-endian PCM.
pub fn encode_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &clip.samples {
        writer
            .write_sample(quantize_i16(s))
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

/// Inverse of the 1/32768 decode scaling, saturating at the i16 range.
pub fn quantize_i16(sample: f32) -> i16 {
    (sample as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Polyphase Kaiser-windowed sinc resampler for a fixed rational ratio.
///
/// Output sample `n` sits at input time `n * down / up`. Each of the `up`
/// phases owns a 64-tap kernel centred on that fractional position, normalised
/// to unit DC gain.
struct Polyphase {
    up: u64,
    down: u64,
    cutoff: f64,
    i0_beta: f64,
    table: Option<Vec<f64>>,
}

impl Polyphase {
    fn new(source_hz: u32, target_hz: u32) -> Self {
        let g = gcd(source_hz as u64, target_hz as u64);
        let up = target_hz as u64 / g;
        let down = source_hz as u64 / g;
        // Cutoff in cycles per input sample, relative to the input Nyquist.
        let cutoff = RESAMPLER_CUTOFF * (source_hz.min(target_hz) as f64 / source_hz as f64);
        let mut this = Self {
            up,
            down,
            cutoff,
            i0_beta: bessel_i0(RESAMPLER_KAISER_BETA),
            table: None,
        };
        if up <= MAX_TABULATED_PHASES {
            let mut table = Vec::with_capacity(up as usize * RESAMPLER_TAPS);
            for phase in 0..up {
                table.extend_from_slice(&this.kernel(phase));
            }
            this.table = Some(table);
        }
        this
    }

    fn kernel(&self, phase: u64) -> [f64; RESAMPLER_TAPS] {
        let half = (RESAMPLER_TAPS / 2) as f64;
        let frac = phase as f64 / self.up as f64;
        let mut taps = [0.0; RESAMPLER_TAPS];
        for (k, tap) in taps.iter_mut().enumerate() {
            // Distance from the output instant to input sample (base - 31 + k).
            let x = k as f64 - (half - 1.0) - frac;
            let r = x / half;
            if r.abs() >= 1.0 {
                continue;
            }
            let window = bessel_i0(RESAMPLER_KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta;
            *tap = self.cutoff * sinc(self.cutoff * x) * window;
        }
        let sum: f64 = taps.iter().sum();
        for tap in &mut taps {
            *tap /= sum;
        }
        taps
    }

    fn run(&self, input: &[f32]) -> Vec<f32> {
        let out_len = (input.len() as u128 * self.up as u128 / self.down as u128) as usize;
        let offset = RESAMPLER_TAPS as i64 / 2 - 1;
        let mut out = Vec::with_capacity(out_len);
        let mut scratch;
        for n in 0..out_len as u64 {
            let pos = n as u128 * self.down as u128;
            let base = (pos / self.up as u128) as i64;
            let phase = (pos % self.up as u128) as u64;
            let kernel: &[f64] = match &self.table {
                Some(t) => {
                    let p = phase as usize * RESAMPLER_TAPS;
                    &t[p..p + RESAMPLER_TAPS]
                }
                None => {
                    scratch = self.kernel(phase);
                    &scratch
                }
            };
            let start = base - offset;
            let mut acc = 0.0;
            if start >= 0 && start as usize + RESAMPLER_TAPS <= input.len() {
                let window = &input[start as usize..start as usize + RESAMPLER_TAPS];
                for (x, h) in window.iter().zip(kernel) {
                    acc += *x as f64 * h;
                }
            } else {
                for (k, h) in kernel.iter().enumerate() {
                    let i = start + k as i64;
                    if i >= 0 && (i as usize) < input.len() {
                        acc += input[i as usize] as f64 * h;
                    }
                }
            }
            out.push(acc.clamp(-1.0, 1.0) as f32);
        }
        out
    }
}

/// Resamples to `target_hz`.
///
/// The output has `floor(N * target / source)` samples. Equal rates return an
/// exact copy.
pub fn resample(clip: &AudioClip, target_hz: u32) -> Result<AudioClip, AudioError> {
    if target_hz == 0 {
        return Err(AudioError::Invalid("target rate must be positive".into()));
    }
    if clip.sample_rate_hz == 0 {
        return Err(AudioError::Invalid("source rate must be positive".into()));
    }
    if clip.sample_rate_hz == target_hz {
        return Ok(clip.clone());
    }
    let samples = Polyphase::new(clip.sample_rate_hz, target_hz).run(&clip.samples);
    Ok(AudioClip {
        clip_id: clip.clip_id.clone(),
        samples,
        sample_rate_hz: target_hz,
    })
}

/// Decode and bring to the encoder rate in one step.
pub fn load_for_encoder(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let clip = decode_wav(path)?;
    resample(&clip, ENCODER_RATE_HZ)
}
