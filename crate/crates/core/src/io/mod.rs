//! On-disk formats: binary clouds and queries, JSON sidecars, COLMAP text
//! import.
//!
//! All binary numbers are little-endian; positions and bearings are `f64`,
//! descriptors `f32`.

mod cloud;
mod colmap;
mod query;

pub use cloud::{decode_cloud, encode_cloud, load_cloud, save_cloud, Cloud};
pub use colmap::{ingest_colmap_points, parse_colmap_points, read_descriptor_file, write_descriptor_file, ColmapImport};
pub use query::{decode_queries, encode_queries, load_queries, save_queries};

use std::path::Path;

use thiserror::Error;

use crate::construction::ProvenanceSidecar;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("unknown magic {0:?}")]
    BadMagic(String),
    #[error("unsupported {family} version {version:?}")]
    UnsupportedVersion { family: &'static str, version: String },
    #[error("truncated input at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("{count} trailing bytes after byte {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("non-finite value at byte {offset}")]
    NonFinite { offset: usize },
    #[error("record {index}: {what} has norm {norm}, expected 1")]
    NonUnit { index: usize, what: &'static str, norm: f64 },
    #[error("invalid value at byte {offset}: {message}")]
    Invalid { offset: usize, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Bounds-checked little-endian cursor that reports byte offsets.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let have = self.buf.len() - self.pos;
        if have < n {
            return Err(IoError::Truncated {
                offset: self.pos,
                needed: n - have,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], IoError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, IoError> {
        let offset = self.pos;
        let v = f64::from_le_bytes(self.array()?);
        if !v.is_finite() {
            return Err(IoError::NonFinite { offset });
        }
        Ok(v)
    }

    pub(crate) fn f32(&mut self) -> Result<f32, IoError> {
        let offset = self.pos;
        let v = f32::from_le_bytes(self.array()?);
        if !v.is_finite() {
            return Err(IoError::NonFinite { offset });
        }
        Ok(v)
    }

    pub(crate) fn vec3(&mut self) -> Result<crate::geometry::Vec3, IoError> {
        Ok(crate::geometry::Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>, IoError> {
        (0..n).map(|_| self.f32()).collect()
    }

    /// Element count that must fit in the remaining bytes at `record` bytes each.
    pub(crate) fn count(&mut self, record: usize) -> Result<usize, IoError> {
        let offset = self.pos;
        let n = self.u64()?;
        let have = self.buf.len() - self.pos;
        match usize::try_from(n).ok().and_then(|n| n.checked_mul(record).map(|b| (n, b))) {
            Some((n, bytes)) if bytes <= have => Ok(n),
            Some((_, bytes)) => Err(IoError::Truncated {
                offset: self.pos,
                needed: bytes - have,
            }),
            None => Err(IoError::Invalid {
                offset,
                message: format!("record count {n} overflows"),
            }),
        }
    }

    pub(crate) fn finish(self) -> Result<(), IoError> {
        let count = self.buf.len() - self.pos;
        if count > 0 {
            return Err(IoError::TrailingBytes { offset: self.pos, count });
        }
        Ok(())
    }
}

#[derive(Default)]
pub(crate) struct Writer {
    pub(crate) buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub(crate) fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub(crate) fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub(crate) fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub(crate) fn vec3(&mut self, v: &crate::geometry::Vec3) {
        for x in v.iter() {
            self.f64(*x);
        }
    }

    pub(crate) fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.bytes(&x.to_le_bytes());
        }
    }
}

pub fn save_sidecar(path: impl AsRef<Path>, sidecar: &ProvenanceSidecar) -> Result<(), IoError> {
    let s = serde_json::to_string(sidecar)?;
    std::fs::write(path, s + "\n")?;
    Ok(())
}

pub fn load_sidecar(path: impl AsRef<Path>) -> Result<ProvenanceSidecar, IoError> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}
