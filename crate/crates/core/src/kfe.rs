//! KFE binary embedding files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   "KFE1"            4 bytes
//! dim     u32
//! count   u64
//! record  { key_len: u16, key: [u8; key_len] (UTF-8), vector: [f32; dim] } x count
//! ```
//!
//! Files must end exactly after the last record; keys are unique.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"KFE1";
const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum KfeError {
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

fn format_err<T>(msg: impl Into<String>) -> Result<T, KfeError> {
    Err(KfeError::Format(msg.into()))
}

/// In-memory contents of a KFE file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct KfeFile {
    pub dim: usize,
    pub records: Vec<(String, Vec<f32>)>,
}

impl KfeFile {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, key: impl Into<String>, vector: Vec<f32>) -> Result<(), KfeError> {
        let key = key.into();
        if vector.len() != self.dim {
            return format_err(format!(
                "vector for {key:?} has length {}, expected {}",
                vector.len(),
                self.dim
            ));
        }
        self.records.push((key, vector));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn encode(&self) -> Result<Vec<u8>, KfeError> {
        if self.dim == 0 || self.dim > u32::MAX as usize {
            return format_err(format!("invalid dimension {}", self.dim));
        }
        let mut seen = HashSet::with_capacity(self.records.len());
        let mut out = Vec::with_capacity(
            HEADER_LEN + self.records.len() * (2 + 16 + 4 * self.dim),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for (key, vector) in &self.records {
            if !seen.insert(key.as_str()) {
                return format_err(format!("duplicate key {key:?}"));
            }
            if key.len() > u16::MAX as usize {
                return format_err(format!("key longer than {} bytes", u16::MAX));
            }
            if vector.len() != self.dim {
                return format_err(format!(
                    "vector for {key:?} has length {}, expected {}",
                    vector.len(),
                    self.dim
                ));
            }
            out.extend_from_slice(&(key.len() as u16).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for v in vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, KfeError> {
        if bytes.len() < HEADER_LEN {
            return format_err(format!("file too short for header: {} bytes", bytes.len()));
        }
        if &bytes[..4] != MAGIC {
            return format_err(format!("bad magic {:?}", &bytes[..4]));
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if dim == 0 {
            return format_err("dimension is zero");
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let vec_bytes = dim
            .checked_mul(4)
            .ok_or_else(|| KfeError::Format("dimension overflow".into()))?;
        // Every record needs at least 2 + vec_bytes bytes.
        let max_records = (bytes.len() - HEADER_LEN) / (2 + vec_bytes);
        if count > max_records as u64 {
            return format_err(format!(
                "count {count} exceeds what {} payload bytes can hold at dim {dim}",
                bytes.len() - HEADER_LEN
            ));
        }
        let count = count as usize;

        let mut pos = HEADER_LEN;
        let mut records = Vec::with_capacity(count);
        let mut seen = HashSet::with_capacity(count);
        for i in 0..count {
            let Some(len_bytes) = bytes.get(pos..pos + 2) else {
                return format_err(format!("truncated key length in record {i}"));
            };
            let key_len = u16::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            pos += 2;
            let Some(key_bytes) = bytes.get(pos..pos + key_len) else {
                return format_err(format!("truncated key in record {i}"));
            };
            let key = std::str::from_utf8(key_bytes)
                .map_err(|_| KfeError::Format(format!("key of record {i} is not UTF-8")))?
                .to_string();
            pos += key_len;
            let Some(raw) = bytes.get(pos..pos + vec_bytes) else {
                return format_err(format!("truncated vector in record {i} ({key:?})"));
            };
            pos += vec_bytes;
            let vector: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if !seen.insert(key.clone()) {
                return format_err(format!("duplicate key {key:?}"));
            }
            records.push((key, vector));
        }
        if pos != bytes.len() {
            return format_err(format!(
                "{} trailing bytes after {count} records",
                bytes.len() - pos
            ));
        }
        Ok(Self { dim, records })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, KfeError> {
        Self::decode(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), KfeError> {
        let bytes = self.encode()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }
}
