//! The segment grid shared by every encoder: a 25 ms window advanced by 20 ms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FramingError {
    #[error("window ({window}) and stride ({stride}) must be positive with window >= stride")]
    InvalidSpec { window: usize, stride: usize },
    #[error("frame {index} out of range ({count} frames)")]
    IndexOutOfRange { index: usize, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub window_samples: usize,
    pub stride_samples: usize,
}

impl Default for FrameSpec {
    /// 400 / 320 samples, i.e. 25 ms / 20 ms at 16 kHz.
    fn default() -> Self {
        Self {
            window_samples: 400,
            stride_samples: 320,
        }
    }
}

impl FrameSpec {
    pub fn new(window_samples: usize, stride_samples: usize) -> Result<Self, FramingError> {
        let spec = Self {
            window_samples,
            stride_samples,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), FramingError> {
        if self.stride_samples == 0 || self.window_samples < self.stride_samples {
            return Err(FramingError::InvalidSpec {
                window: self.window_samples,
                stride: self.stride_samples,
            });
        }
        Ok(())
    }

    /// Number of whole windows in `n_samples`; trailing samples are dropped.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        if n_samples < self.window_samples {
            0
        } else {
            (n_samples - self.window_samples) / self.stride_samples + 1
        }
    }

    /// Half-open sample range `[start, end)` of frame `index`.
    pub fn frame_bounds(
        &self,
        index: usize,
        n_samples: usize,
    ) -> Result<(usize, usize), FramingError> {
        let count = self.frame_count(n_samples);
        if index >= count {
            return Err(FramingError::IndexOutOfRange { index, count });
        }
        let start = index * self.stride_samples;
        Ok((start, start + self.window_samples))
    }

    /// Stride in whole milliseconds at `sample_rate_hz`.
    pub fn stride_ms(&self, sample_rate_hz: u32) -> u32 {
        (self.stride_samples as u64 * 1000 / sample_rate_hz as u64) as u32
    }

    pub fn overlap_samples(&self) -> usize {
        self.window_samples - self.stride_samples
    }
}
