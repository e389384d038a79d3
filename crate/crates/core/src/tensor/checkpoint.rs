//! Named-tensor container files.
//!
//! Layout: `b"CKPT"`, u32 version, u64 header length, a JSON header, then the
//! concatenated little-endian row-major tensor bytes. The header lists each
//! tensor's name, dtype, shape and byte range relative to the end of the
//! header.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DType, Scalar, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: usize,
    length: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config_hash: String,
    step: u64,
    tensors: Vec<Entry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
struct Stored {
    dtype: DType,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

/// In-memory checkpoint: tensors by name plus run bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub step: u64,
    pub metadata: serde_json::Value,
    tensors: BTreeMap<String, Stored>,
}

/// Hex SHA-256 of the JSON serialization of `config`.
pub fn config_hash<S: Serialize>(config: &S) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

impl Checkpoint {
    pub fn new(config_hash: impl Into<String>, step: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            step,
            metadata: serde_json::Value::Null,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert<T: Scalar>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) {
        let mut bytes = Vec::with_capacity(tensor.numel() * T::DTYPE.size());
        for &v in tensor.data() {
            v.write_le(&mut bytes);
        }
        self.tensors.insert(name.into(), Stored { dtype: T::DTYPE, shape: tensor.shape().to_vec(), bytes });
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.tensors.get(name).map(|s| s.shape.as_slice())
    }

    pub fn dtype(&self, name: &str) -> Option<DType> {
        self.tensors.get(name).map(|s| s.dtype)
    }

    /// Tensor `name` converted to `T`.
    pub fn get<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let s = self.tensors.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        match s.dtype {
            DType::Float32 => Ok(decode::<f32>(s).cast()),
            DType::Float64 => Ok(decode::<f64>(s).cast()),
        }
    }

    /// Like [`Checkpoint::get`] but fails unless the stored shape is `expected`.
    pub fn get_shaped<T: Scalar>(&self, name: &str, expected: &[usize]) -> Result<Tensor<T>> {
        let t = self.get::<T>(name)?;
        if t.shape() != expected {
            return Err(Error::CheckpointShape {
                name: name.to_string(),
                expected: expected.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, s) in &self.tensors {
            entries.push(Entry {
                name: name.clone(),
                dtype: s.dtype,
                shape: s.shape.clone(),
                offset,
                length: s.bytes.len(),
            });
            offset += s.bytes.len();
        }
        let header = serde_json::to_vec(&Header {
            config_hash: self.config_hash.clone(),
            step: self.step,
            tensors: entries,
            metadata: self.metadata.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for s in self.tensors.values() {
            out.extend_from_slice(&s.bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body_start = 16usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..body_start])?;
        let body = &bytes[body_start..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let numel: usize = e.shape.iter().product();
            if numel * e.dtype.size() != e.length {
                return Err(Error::Checkpoint(format!("{}: length {} does not match shape {:?}", e.name, e.length, e.shape)));
            }
            let end = e.offset.checked_add(e.length).filter(|&end| end <= body.len());
            let end = end.ok_or_else(|| Error::Checkpoint(format!("{}: data out of range", e.name)))?;
            tensors.insert(e.name, Stored { dtype: e.dtype, shape: e.shape, bytes: body[e.offset..end].to_vec() });
        }
        Ok(Self { config_hash: header.config_hash, step: header.step, metadata: header.metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn decode<T: Scalar>(s: &Stored) -> Tensor<T> {
    let w = T::DTYPE.size();
    let data = s.bytes.chunks_exact(w).map(T::read_le).collect();
    Tensor::from_parts(s.shape.clone(), data)
}
