//! Named-tensor checkpoint container.
//!
//! Layout:
//!
//! ```text
//! b"MVQA1"                       5 bytes magic
//! header_len                     u64, little-endian
//! header                         UTF-8 JSON, header_len bytes
//!   {"version":1,
//!    "tensors":[{"name":..,"dtype":"f32","shape":[..],"offset":..}, ..],
//!    "meta":{..}}
//! payload                        little-endian f32 values
//! ```
//!
//! `offset` is a byte offset into the payload. The payload holds exactly the
//! declared tensors; both short and over-long payloads are rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::tensor::{Params, Tensor};

pub const MAGIC: &[u8; 5] = b"MVQA1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl StoredTensor {
    fn bits_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, StoredTensor>,
    pub meta: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.insert(name.into(), StoredTensor { shape, data });
    }

    /// Stores every parameter of `params` (narrowed to f32) under `prefix`.
    pub fn insert_params(&mut self, prefix: &str, params: &impl Params) {
        params.visit(prefix, &mut |name, t| {
            self.insert(
                name,
                t.shape.clone(),
                t.data.iter().map(|&x| x as f32).collect(),
            );
        });
    }

    /// Overwrites every parameter of `params` from the stored tensors.
    pub fn load_params(&self, prefix: &str, params: &mut impl Params) -> Result<()> {
        let mut failure = None;
        params.visit_mut(prefix, &mut |name, t: &mut Tensor| {
            if failure.is_some() {
                return;
            }
            match self.tensors.get(name) {
                None => failure = Some(Error::Shape(format!("checkpoint lacks tensor `{name}`"))),
                Some(stored) if stored.shape != t.shape => {
                    failure = Some(Error::Shape(format!(
                        "tensor `{name}` has shape {:?} in checkpoint, model expects {:?}",
                        stored.shape, t.shape
                    )))
                }
                Some(stored) => {
                    for (dst, src) in t.data.iter_mut().zip(&stored.data) {
                        *dst = f64::from(*src);
                    }
                }
            }
        });
        failure.map_or(Ok(()), Err)
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let p = format!("{prefix}.");
        self.tensors.keys().any(|k| k.starts_with(&p))
    }

    /// Exact equality on tensor bit patterns and metadata.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.meta == other.meta
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, a), (nb, b))| na == nb && a.bits_eq(b))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: "f32".into(),
                shape: t.shape.clone(),
                offset,
            });
            offset += 4 * t.data.len() as u64;
        }
        let header = serde_json::to_vec(&Header {
            version: FORMAT_VERSION,
            tensors: entries,
            meta: self.meta.clone(),
        })?;
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(Error::Integrity("checkpoint truncated before magic".into()));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&bytes[..MAGIC.len()])
            )));
        }
        let rest = &bytes[MAGIC.len()..];
        if rest.len() < 8 {
            return Err(Error::Integrity("checkpoint truncated in header length".into()));
        }
        let header_len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes"));
        let rest = &rest[8..];
        if header_len > rest.len() as u64 {
            return Err(Error::Integrity(format!(
                "header declares {header_len} bytes, only {} present",
                rest.len()
            )));
        }
        let (header_bytes, payload) = rest.split_at(header_len as usize);
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::Format(format!("invalid checkpoint header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {} (expected {FORMAT_VERSION})",
                header.version
            )));
        }

        let mut tensors = BTreeMap::new();
        let mut declared = 0u64;
        for entry in header.tensors {
            if entry.dtype != "f32" {
                return Err(Error::Format(format!(
                    "tensor `{}` has unsupported dtype `{}`",
                    entry.name, entry.dtype
                )));
            }
            let count: u64 = entry.shape.iter().map(|&d| d as u64).product();
            let nbytes = count * 4;
            let end = entry.offset.checked_add(nbytes).ok_or_else(|| {
                Error::Integrity(format!("tensor `{}` offset overflows", entry.name))
            })?;
            if end > payload.len() as u64 {
                return Err(Error::Integrity(format!(
                    "tensor `{}` needs {count} floats at byte {}, payload has {} bytes",
                    entry.name,
                    entry.offset,
                    payload.len()
                )));
            }
            let raw = &payload[entry.offset as usize..end as usize];
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            declared += nbytes;
            if tensors
                .insert(
                    entry.name.clone(),
                    StoredTensor {
                        shape: entry.shape,
                        data,
                    },
                )
                .is_some()
            {
                return Err(Error::Integrity(format!(
                    "duplicate tensor name `{}`",
                    entry.name
                )));
            }
        }
        if declared != payload.len() as u64 {
            return Err(Error::Integrity(format!(
                "payload has {} bytes, tensors declare {declared}",
                payload.len()
            )));
        }
        Ok(Self {
            tensors,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.insert("a.weight", vec![2, 2], vec![1.0, -2.5, f32::MIN_POSITIVE, 3.0e10]);
        ck.insert("b", vec![3], vec![0.0, -0.0, 7.0]);
        ck.meta.insert("note".into(), Value::from("x"));
        ck
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert!(ck.bit_eq(&back));
        // -0.0 must survive with its sign bit
        assert_eq!(back.tensors["b"].data[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[..5].copy_from_slice(b"XXXX1");
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_other_versions() {
        let header = br#"{"version":2,"tensors":[],"meta":{}}"#;
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(header);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [3, 9, 20, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::Integrity(_))
            ));
        }
        let mut longer = bytes.clone();
        longer.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(Checkpoint::from_bytes(&longer), Err(Error::Integrity(_))));
    }
}
