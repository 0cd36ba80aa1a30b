//! Named-tensor container: the weight store for the embedder and for model
//! checkpoints, with a compact binary file format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic "NTSR" | version u32 | tensor count u32
//! per tensor: name length u16 | UTF-8 name | rank u8 | dims u32 each | f32 data
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

const MAGIC: &[u8; 4] = b"NTSR";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic, not a named-tensor file")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated mid-record")]
    TruncatedFile,
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("tensor name longer than 65535 bytes")]
    NameTooLong,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered map from name to shaped tensor. Insertion order is preserved and
/// is the serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedTensorStore {
    tensors: Vec<NamedTensor>,
    index: HashMap<String, usize>,
}

impl NamedTensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<(), TensorError> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateName(name.to_string()));
        }
        let numel: usize = shape.iter().product();
        assert_eq!(data.len(), numel, "tensor {name:?}: data length {} != shape product {numel}", data.len());
        self.index.insert(name.to_string(), self.tensors.len());
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape,
            data,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedTensor> {
        let i = *self.index.get(name)?;
        Some(&mut self.tensors[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut NamedTensor> {
        self.tensors.iter_mut()
    }

    /// A store with the same names and shapes, all values zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for t in &self.tensors {
            out.insert(&t.name, t.shape.clone(), vec![0.0; t.numel()]).unwrap();
        }
        out
    }
}

pub fn save_named_tensors(store: &NamedTensorStore, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for t in store.iter() {
        let name_bytes = t.name.as_bytes();
        let name_len = u16::try_from(name_bytes.len()).map_err(|_| TensorError::NameTooLong)?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_named_tensors(path: impl AsRef<Path>) -> Result<NamedTensorStore, TensorError> {
    parse_named_tensors(&fs::read(path)?)
}

pub fn parse_named_tensors(bytes: &[u8]) -> Result<NamedTensorStore, TensorError> {
    struct Cursor<'a> {
        bytes: &'a [u8],
        pos: usize,
    }
    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
            if self.pos + n > self.bytes.len() {
                return Err(TensorError::TruncatedFile);
            }
            let out = &self.bytes[self.pos..self.pos + n];
            self.pos += n;
            Ok(out)
        }
        fn u16(&mut self) -> Result<u16, TensorError> {
            let b = self.take(2)?;
            Ok(u16::from_le_bytes([b[0], b[1]]))
        }
        fn u32(&mut self) -> Result<u32, TensorError> {
            let b = self.take(4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        }
    }

    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4).map_err(|_| TensorError::BadMagic)? != MAGIC {
        return Err(TensorError::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(TensorError::UnsupportedVersion(version));
    }
    let count = cur.u32()?;
    let mut store = NamedTensorStore::new();
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| TensorError::TruncatedFile)?;
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or(TensorError::TruncatedFile)?;
        let raw = cur.take(numel)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        store.insert(&name, shape, data)?;
    }
    Ok(store)
}
