//! `.gph` trained-head files.
//!
//! Little-endian: `b"GPH1"`, u32 version = 1, u32 dim, u32 C, standardization
//! mean (dim f32) and std (dim f32), then W1 (dim x 128), b1, W2 (128 x 64),
//! b2, W3 (64 x C), b3 as row-major f32, and finally a CRC-32 (IEEE) of every
//! preceding byte.

use std::path::Path;

use super::{Dense, MlpParams, MlpShape, Standardizer, TrainedHead, HIDDEN_1, HIDDEN_2};
use crate::store::{io_err, push_f32s, write_atomic, Reader, StoreError};

pub const HEAD_MAGIC: &[u8; 4] = b"GPH1";
pub const HEAD_VERSION: u32 = 1;

pub fn encode_head(head: &TrainedHead) -> Result<Vec<u8>, StoreError> {
    let shape = head.params.shape();
    let header_err = |reason: String| StoreError::Header {
        path: "<head>".into(),
        reason,
    };
    if !shape.is_standard() {
        return Err(header_err(format!(
            "hidden widths {}x{} cannot be stored (format fixes {HIDDEN_1}x{HIDDEN_2})",
            shape.hidden1, shape.hidden2
        )));
    }
    if head.standardizer.dim() != shape.input {
        return Err(header_err(
            "standardizer width differs from input dim".into(),
        ));
    }
    let dim = u32::try_from(shape.input).map_err(|_| header_err("dim exceeds u32".into()))?;
    let classes =
        u32::try_from(shape.classes).map_err(|_| header_err("class count exceeds u32".into()))?;

    let mut buf = Vec::with_capacity(20 + 4 * (2 * shape.input + head.params.num_params()));
    buf.extend_from_slice(HEAD_MAGIC);
    buf.extend_from_slice(&HEAD_VERSION.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(&classes.to_le_bytes());
    push_f32s(&mut buf, &head.standardizer.mean)?;
    push_f32s(&mut buf, &head.standardizer.std)?;
    for t in head.params.tensors() {
        push_f32s(&mut buf, t)?;
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn decode_head(bytes: &[u8], path: &Path) -> Result<TrainedHead, StoreError> {
    let p = || path.display().to_string();
    if bytes.len() >= 4 && &bytes[..4] != HEAD_MAGIC {
        return Err(StoreError::BadMagic {
            path: p(),
            found: bytes[..4].try_into().unwrap(),
        });
    }
    if bytes.len() < 20 {
        return Err(StoreError::Truncated {
            path: p(),
            needed: 20,
            available: bytes.len(),
        });
    }
    let mut r = Reader::new(bytes, path);
    r.take(4)?;
    let version = r.u32()?;
    if version != HEAD_VERSION {
        return Err(StoreError::Version {
            path: p(),
            found: version,
        });
    }
    let dim = r.u32()? as usize;
    let classes = r.u32()? as usize;
    if dim == 0 || classes == 0 {
        return Err(StoreError::Header {
            path: p(),
            reason: "dim and class count must be positive".into(),
        });
    }
    let shape = MlpShape::standard(dim, classes);
    let (_, mean) = r.f32s(dim)?;
    let (_, std) = r.f32s(dim)?;
    let mut dense = |inputs: usize, outputs: usize| -> Result<Dense<f32>, StoreError> {
        let (_, weights) = r.f32s(inputs * outputs)?;
        let (_, bias) = r.f32s(outputs)?;
        Ok(Dense {
            inputs,
            outputs,
            weights,
            bias,
        })
    };
    let hidden1 = dense(shape.input, shape.hidden1)?;
    let hidden2 = dense(shape.hidden1, shape.hidden2)?;
    let output = dense(shape.hidden2, shape.classes)?;
    let body_len = bytes.len() - r.remaining();
    let stored = r.u32()?;
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(StoreError::Crc {
            path: p(),
            stored,
            computed,
        });
    }
    if r.remaining() != 0 {
        return Err(StoreError::Header {
            path: p(),
            reason: format!("{} trailing bytes", r.remaining()),
        });
    }
    Ok(TrainedHead {
        standardizer: Standardizer { mean, std },
        params: MlpParams {
            hidden1,
            hidden2,
            output,
        },
    })
}

pub fn write_head(head: &TrainedHead, path: impl AsRef<Path>) -> Result<(), StoreError> {
    write_atomic(path.as_ref(), &encode_head(head)?)
}

pub fn read_head(path: impl AsRef<Path>) -> Result<TrainedHead, StoreError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_head(&bytes, path)
}
