//! Self-describing tensor container.
//!
//! Layout: 8-byte magic `ZAVSRCKP`, `u32` format version, `u64` header
//! length, a JSON header (kind, metadata, tensor index), then the raw
//! little-endian tensor data in index order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Mat, ParamStore};

pub const MAGIC: &[u8; 8] = b"ZAVSRCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("expected a {expected} checkpoint, found {found}")]
    Kind { expected: String, found: String },
    #[error("tensor {0} missing from checkpoint")]
    Missing(String),
    #[error("tensor {name}: shape {found:?} does not match model {expected:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("truncated tensor data")]
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dtype: DType,
    pub value: Mat,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    dtype: DType,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    /// Adds every parameter of `store` as f32 under `prefix`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (_, name, value) in store.iter() {
            self.tensors.push(Tensor {
                name: format!("{prefix}{name}"),
                dtype: DType::F32,
                value: value.clone(),
            });
        }
    }

    pub fn push(&mut self, name: impl Into<String>, dtype: DType, value: Mat) {
        self.tensors.push(Tensor {
            name: name.into(),
            dtype,
            value,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Overwrites every parameter of `store` from tensors named `prefix + name`.
    pub fn restore_store(&self, prefix: &str, store: &mut ParamStore) -> Result<(), CheckpointError> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = format!("{prefix}{}", store.name(id));
            let t = self.get(&name).ok_or_else(|| CheckpointError::Missing(name.clone()))?;
            let expected = store.get(id).dim();
            if t.value.dim() != expected {
                return Err(CheckpointError::Shape {
                    name,
                    expected,
                    found: t.value.dim(),
                });
            }
            store.get_mut(id).assign(&t.value);
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::Kind {
                expected: kind.to_string(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), CheckpointError> {
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| IndexEntry {
                    name: t.name.clone(),
                    dtype: t.dtype,
                    shape: [t.value.nrows(), t.value.ncols()],
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for t in &self.tensors {
            for &x in t.value.iter() {
                match t.dtype {
                    DType::F32 => w.write_all(&(x as f32).to_le_bytes())?,
                    DType::F64 => w.write_all(&x.to_le_bytes())?,
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let mut header = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n = e.shape[0] * e.shape[1];
            let mut raw = vec![0u8; n * e.dtype.width()];
            r.read_exact(&mut raw).map_err(|_| CheckpointError::Truncated)?;
            let data: Vec<f64> = match e.dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            };
            let value = Mat::from_shape_vec((e.shape[0], e.shape[1]), data)
                .map_err(|_| CheckpointError::Truncated)?;
            tensors.push(Tensor {
                name: e.name,
                dtype: e.dtype,
                value,
            });
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.add("a.weight", Mat::from_shape_fn((3, 2), |(i, j)| i as f64 * 0.3 - j as f64 / 7.0));
        let mut ck = Checkpoint::new("test", serde_json::json!({"d": 3}));
        ck.push_store("model.", &store);
        ck.push("opt.m", DType::F64, Mat::from_elem((1, 1), 1.0 / 3.0));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        let mut other = store.clone();
        other.get_mut(crate::nn::ParamId(0)).fill(0.0);
        back.restore_store("model.", &mut other).unwrap();
        assert_eq!(other, store);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            Checkpoint::read_from(&b"NOTACKPT\x01\0\0\0"[..]),
            Err(CheckpointError::BadMagic)
        ));
        let mut ck = Checkpoint::new("t", serde_json::Value::Null);
        ck.push("x", DType::F32, Mat::zeros((4, 4)));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            Checkpoint::read_from(buf.as_slice()),
            Err(CheckpointError::Truncated)
        ));
    }
}
