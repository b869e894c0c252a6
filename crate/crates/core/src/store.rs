//! On-disk cache of feature matrices (`.gpf` files).
//!
//! Layout, all integers little-endian:
//!
//! | field        | bytes                                   |
//! |--------------|-----------------------------------------|
//! | magic        | `b"GPF1"`                               |
//! | version      | u32 = 1                                 |
//! | model_id     | u32 byte length, then UTF-8 bytes       |
//! | layer_index  | u16                                     |
//! | dim          | u32                                     |
//! | num_frames   | u32                                     |
//! | stride_ms    | u32                                     |
//! | payload      | `num_frames * dim` f32, row-major       |
//! | crc          | u32 CRC-32 (IEEE) of the payload bytes  |
//!
//! The clip id is not stored; it is the file stem.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::encoders::FeatureMatrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"GPF1";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_EXTENSION: &str = "gpf";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}")]
    BadMagic { path: String, found: [u8; 4] },
    #[error("{path}: unsupported version {found}")]
    Version { path: String, found: u32 },
    #[error("{path}: truncated ({needed} bytes needed, {available} present)")]
    Truncated {
        path: String,
        needed: usize,
        available: usize,
    },
    #[error("{path}: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Crc {
        path: String,
        stored: u32,
        computed: u32,
    },
    #[error("{path}: malformed header: {reason}")]
    Header { path: String, reason: String },
    #[error("refusing to write non-finite value at index {index}")]
    NonFinite { index: usize },
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Little-endian cursor over a byte buffer that reports truncation.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self {
            bytes,
            pos: 0,
            path,
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(StoreError::Truncated {
                path: self.path.display().to_string(),
                needed: self.pos.saturating_add(n),
                available: self.bytes.len(),
            }),
        }
    }

    pub(crate) fn u16(&mut self) -> Result<u16, StoreError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, count: usize) -> Result<(&'a [u8], Vec<f32>), StoreError> {
        let len = count.checked_mul(4).ok_or_else(|| StoreError::Header {
            path: self.path.display().to_string(),
            reason: "payload size overflows".into(),
        })?;
        let raw = self.take(len)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((raw, values))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub(crate) fn push_f32s(buf: &mut Vec<u8>, values: &[f32]) -> Result<(), StoreError> {
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(StoreError::NonFinite { index });
    }
    buf.reserve(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Writes `bytes` to a temporary sibling and renames it over `path`, so
/// readers never observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

/// Serialises a matrix into the `.gpf` byte layout.
pub fn encode_features(matrix: &FeatureMatrix) -> Result<Vec<u8>, StoreError> {
    let frames = matrix.frames();
    let header_err = |reason: &str| StoreError::Header {
        path: matrix.clip_id.clone(),
        reason: reason.into(),
    };
    let dim = u32::try_from(matrix.dim).map_err(|_| header_err("dim exceeds u32"))?;
    let num_frames = u32::try_from(frames).map_err(|_| header_err("frame count exceeds u32"))?;
    let model = matrix.model_id.as_bytes();
    let model_len = u32::try_from(model.len()).map_err(|_| header_err("model id too long"))?;

    let mut buf = Vec::with_capacity(30 + model.len() + matrix.values.len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&model_len.to_le_bytes());
    buf.extend_from_slice(model);
    buf.extend_from_slice(&matrix.layer_index.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(&num_frames.to_le_bytes());
    buf.extend_from_slice(&matrix.stride_ms.to_le_bytes());
    let payload_start = buf.len();
    push_f32s(&mut buf, &matrix.values)?;
    let crc = crc32fast::hash(&buf[payload_start..]);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

/// Parses `.gpf` bytes; `path` is used for the clip id and error messages.
pub fn decode_features(bytes: &[u8], path: &Path) -> Result<FeatureMatrix, StoreError> {
    let mut r = Reader::new(bytes, path);
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if &magic != FEATURE_MAGIC {
        return Err(StoreError::BadMagic {
            path: path.display().to_string(),
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != FEATURE_VERSION {
        return Err(StoreError::Version {
            path: path.display().to_string(),
            found: version,
        });
    }
    let model_len = r.u32()? as usize;
    let model_id = std::str::from_utf8(r.take(model_len)?)
        .map_err(|e| StoreError::Header {
            path: path.display().to_string(),
            reason: format!("model id is not UTF-8: {e}"),
        })?
        .to_owned();
    let layer_index = r.u16()?;
    let dim = r.u32()? as usize;
    let num_frames = r.u32()? as usize;
    let stride_ms = r.u32()?;
    if dim == 0 {
        return Err(StoreError::Header {
            path: path.display().to_string(),
            reason: "dim is zero".into(),
        });
    }
    let count = num_frames
        .checked_mul(dim)
        .ok_or_else(|| StoreError::Header {
            path: path.display().to_string(),
            reason: "frames * dim overflows".into(),
        })?;
    let (raw, values) = r.f32s(count)?;
    let stored = r.u32()?;
    let computed = crc32fast::hash(raw);
    if stored != computed {
        return Err(StoreError::Crc {
            path: path.display().to_string(),
            stored,
            computed,
        });
    }
    if r.remaining() != 0 {
        return Err(StoreError::Header {
            path: path.display().to_string(),
            reason: format!("{} trailing bytes", r.remaining()),
        });
    }
    let clip_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(FeatureMatrix {
        clip_id,
        model_id,
        layer_index,
        dim,
        stride_ms,
        values,
    })
}

pub fn write_features(matrix: &FeatureMatrix, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let bytes = encode_features(matrix)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix, StoreError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode_features(&bytes, path)
}

/// A directory of `.gpf` files laid out as
/// `<root>/<model_id>/layer<k>/<clip_id>.gpf`.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    root: PathBuf,
}

impl FeatureStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, model_id: &str, layer: u16, clip_id: &str) -> PathBuf {
        self.root
            .join(model_id)
            .join(format!("layer{layer}"))
            .join(format!("{clip_id}.{FEATURE_EXTENSION}"))
    }

    pub fn contains(&self, model_id: &str, layer: u16, clip_id: &str) -> bool {
        self.path_for(model_id, layer, clip_id).is_file()
    }

    pub fn put(&self, matrix: &FeatureMatrix) -> Result<PathBuf, StoreError> {
        let path = self.path_for(&matrix.model_id, matrix.layer_index, &matrix.clip_id);
        write_features(matrix, &path)?;
        Ok(path)
    }

    pub fn get(
        &self,
        model_id: &str,
        layer: u16,
        clip_id: &str,
    ) -> Result<FeatureMatrix, StoreError> {
        read_features(self.path_for(model_id, layer, clip_id))
    }

    /// Layers that have a directory under `model_id`, ascending.
    pub fn layers(&self, model_id: &str) -> Result<Vec<u16>, StoreError> {
        let dir = self.root.join(model_id);
        let entries = std::fs::read_dir(&dir).map_err(|e| io_err(&dir, e))?;
        let mut layers = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| io_err(&dir, e))?;
            if !entry.path().is_dir() {
                continue;
            }
            let name = entry.file_name();
            if let Some(k) = name
                .to_str()
                .and_then(|n| n.strip_prefix("layer"))
                .and_then(|n| n.parse::<u16>().ok())
            {
                layers.push(k);
            }
        }
        layers.sort_unstable();
        Ok(layers)
    }
}
