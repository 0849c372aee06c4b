//! Versioned binary container for named tensors plus JSON metadata.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "LGMP" | u32 version | u32 meta length | meta (UTF-8 JSON)
//! u32 tensor count
//! per tensor: u16 name length | name | u32 rows | u32 cols | u64 data offset
//! f32 data, row-major, at the recorded offsets
//! u32 CRC32 of every preceding byte
//! ```
//!
//! Model checkpoints, denoiser checkpoints and latent sets all use it.

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{cast, Mat, Scalar};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LGMP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: Value,
    pub tensors: Vec<(String, Mat<f32>)>,
}

impl Checkpoint {
    pub fn new(meta: Value) -> Self {
        Self { meta, tensors: Vec::new() }
    }

    pub fn from_store<T: Scalar>(meta: Value, store: &ParamStore<T>) -> Self {
        Self { meta, tensors: store.iter().map(|(n, v)| (n.to_string(), cast(v))).collect() }
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, value: &Mat<T>) {
        self.tensors.push((name.into(), cast(value)));
    }

    pub fn get(&self, name: &str) -> Option<&Mat<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn to_store<T: Scalar>(&self) -> ParamStore<T> {
        let (names, values) = self.tensors.iter().map(|(n, v)| (n.clone(), cast(v))).unzip();
        ParamStore::from_parts(names, values)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let dir_len: usize = self.tensors.iter().map(|(n, _)| 2 + n.len() + 16).sum();
        let mut offset = (out.len() + dir_len) as u64;
        for (name, v) in &self.tensors {
            if name.len() > u16::MAX as usize {
                return Err(Error::contract("tensor name too long"));
            }
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(v.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(v.ncols() as u32).to_le_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * v.len() as u64;
        }
        for (_, v) in &self.tensors {
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated { expected: 4, found: bytes.len() as u64 });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { expected: CHECKPOINT_MAGIC, found: magic });
        }
        if bytes.len() < 16 {
            return Err(Error::Truncated { expected: 16, found: bytes.len() as u64 });
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut pos = 4;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos + n;
            if end > body.len() {
                return Err(Error::Truncated { expected: end as u64 + 4, found: bytes.len() as u64 });
            }
            let s = &body[pos..end];
            pos = end;
            Ok(s)
        };
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let meta_len = u32_at(take(4)?) as usize;
        let meta: Value = serde_json::from_slice(take(meta_len)?)?;
        let count = u32_at(take(4)?) as usize;
        let mut dir = Vec::with_capacity(count);
        for _ in 0..count {
            let n = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(n)?).map_err(|e| Error::Format(format!("tensor name: {e}")))?.to_string();
            let rows = u32_at(take(4)?) as usize;
            let cols = u32_at(take(4)?) as usize;
            let offset = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            dir.push((name, rows, cols, offset));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, rows, cols, offset) in dir {
            let len = rows * cols * 4;
            let raw = body
                .get(offset..offset + len)
                .ok_or_else(|| Error::Format(format!("tensor {name} data out of bounds")))?;
            let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let m = Mat::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))?;
            tensors.push((name, m));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
