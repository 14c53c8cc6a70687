//! Named tensor storage and the TNET1 weights file.
//!
//! TNET1 layout: ASCII header line `TNET1`, one line per tensor
//! `tensor <name> <d0> <d1> <d2> <d3>`, a blank line, then the raw
//! little-endian 64-bit payloads in declaration order. Momentum buffers
//! (`v.` prefix) and batch-norm running statistics round-trip with the
//! weights.

use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use thiserror::Error;

use super::tensor::Tensor4;

const MAGIC: &str = "TNET1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("trailing data after payload ({0} extra bytes)")]
    TrailingData(usize),
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize, usize, usize),
        found: (usize, usize, usize, usize),
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Ordered map from tensor name to tensor. Insertion order is the file
/// declaration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorStore {
    map: IndexMap<String, Tensor4>,
}

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor4) {
        let name = name.into();
        debug_assert!(!self.map.contains_key(&name), "duplicate tensor {name}");
        self.map.insert(name, tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor4, StoreError> {
        self.map
            .get(name)
            .ok_or_else(|| StoreError::MissingTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor4, StoreError> {
        self.map
            .get_mut(name)
            .ok_or_else(|| StoreError::MissingTensor(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor4)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        for (name, t) in &self.map {
            let _ = writeln!(out, "tensor {name} {} {} {} {}", t.n, t.c, t.h, t.w);
        }
        out.push(b'\n');
        for (_, t) in &self.map {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut offset = 0usize;
        let read_line = |offset: &mut usize| -> Result<String, StoreError> {
            let rest = &bytes[*offset..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| StoreError::HeaderMismatch("unterminated header".into()))?;
            let line = std::str::from_utf8(&rest[..nl])
                .map_err(|_| StoreError::HeaderMismatch("non-ASCII header".into()))?
                .to_string();
            *offset += nl + 1;
            Ok(line)
        };
        let magic = read_line(&mut offset)?;
        if magic != MAGIC {
            return Err(StoreError::HeaderMismatch(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let mut decls: Vec<(String, [usize; 4])> = Vec::new();
        loop {
            let line = read_line(&mut offset)?;
            if line.is_empty() {
                break;
            }
            let mut fields = line.split_whitespace();
            if fields.next() != Some("tensor") {
                return Err(StoreError::HeaderMismatch(format!("bad line {line:?}")));
            }
            let name = fields
                .next()
                .ok_or_else(|| StoreError::HeaderMismatch("missing tensor name".into()))?
                .to_string();
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = fields
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| StoreError::HeaderMismatch(format!("bad dims in {line:?}")))?;
            }
            if fields.next().is_some() {
                return Err(StoreError::HeaderMismatch(format!("extra fields in {line:?}")));
            }
            decls.push((name, dims));
        }
        let expected: usize = decls
            .iter()
            .map(|(_, d)| d.iter().product::<usize>() * 8)
            .sum();
        let found = bytes.len() - offset;
        if found < expected {
            return Err(StoreError::TruncatedPayload { expected, found });
        }
        if found > expected {
            return Err(StoreError::TrailingData(found - expected));
        }
        let mut store = TensorStore::new();
        for (name, d) in decls {
            if store.contains(&name) {
                return Err(StoreError::DuplicateName(name));
            }
            let count = d.iter().product::<usize>();
            let data: Vec<f64> = bytes[offset..offset + count * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += count * 8;
            store.insert(
                name,
                Tensor4::from_vec(d[0], d[1], d[2], d[3], data).expect("count matches dims"),
            );
        }
        Ok(store)
    }
}

/// Write a store to disk in TNET1 format.
pub fn save_weights(store: &TensorStore, path: &Path) -> Result<(), StoreError> {
    fs::write(path, store.encode())?;
    Ok(())
}

/// Read a TNET1 file back into a store.
pub fn load_weights(path: &Path) -> Result<TensorStore, StoreError> {
    let bytes = fs::read(path)?;
    TensorStore::decode(&bytes)
}
