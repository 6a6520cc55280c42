//! Binary container shared by feature, response, ridge-fit and adapter files.
//!
//! Layout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "NEFM"
//! 4       1     version (1)
//! 5       4     header length H, u32 little-endian
//! 9       H     JSON header (UTF-8)
//! 9+H     ...   payload: arrays back to back, row-major, little-endian IEEE-754
//! ```
//!
//! The header is `{"kind": str, "meta": {...}, "arrays": [{"name", "shape",
//! "dtype", "offset"}]}` where `offset` is relative to the payload start and
//! `dtype` is `"f64"` or `"f32"`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::gradcore::Tensor;

pub const MAGIC: &[u8; 4] = b"NEFM";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    dtype: Dtype,
    offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    #[serde(default)]
    meta: Map<String, Value>,
    arrays: Vec<ArrayEntry>,
}

/// In-memory form of a container file.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Map<String, Value>,
    pub arrays: Vec<(String, Dtype, Tensor)>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Self { kind: kind.to_string(), meta: Map::new(), arrays: Vec::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl Serialize) -> Self {
        self.meta.insert(key.to_string(), serde_json::to_value(value).expect("serializable meta"));
        self
    }

    pub fn push(&mut self, name: &str, tensor: Tensor) {
        self.arrays.push((name.to_string(), Dtype::F64, tensor));
    }

    pub fn push_f32(&mut self, name: &str, tensor: Tensor) {
        self.arrays.push((name.to_string(), Dtype::F32, tensor));
    }

    pub fn array(&self, name: &str) -> Result<&Tensor> {
        self.arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, t)| t)
            .ok_or_else(|| Error::Format(format!("container has no array named {name:?}")))
    }

    pub fn meta_as<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Format(format!("container header lacks meta field {key:?}")))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Format(format!("expected a {kind:?} container, found {:?}", self.kind)))
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut payload = Vec::new();
        for (name, dtype, t) in &self.arrays {
            entries.push(ArrayEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: *dtype,
                offset: payload.len() as u64,
            });
            match dtype {
                Dtype::F64 => t.data().iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
                Dtype::F32 => t
                    .data()
                    .iter()
                    .for_each(|x| payload.extend_from_slice(&(*x as f32).to_le_bytes())),
            }
        }
        let header = Header { kind: self.kind.clone(), meta: self.meta.clone(), arrays: entries };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(9 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing NEFM magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Format(format!("unsupported container version {}", bytes[4])));
        }
        let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let body = 9 + hlen;
        if bytes.len() < body {
            return Err(Error::Format("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[9..body])?;
        let payload = &bytes[body..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + n * e.dtype.width();
            let raw = payload
                .get(start..end)
                .ok_or_else(|| Error::Format(format!("array {:?} runs past end of payload", e.name)))?;
            let data: Vec<f64> = match e.dtype {
                Dtype::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                Dtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            };
            arrays.push((e.name, e.dtype, Tensor::new(e.shape, data)?));
        }
        Ok(Self { kind: header.kind, meta: header.meta, arrays })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_starts_with_magic_and_version() {
        let mut c = Container::new("features").with_meta("tr", 2.0);
        c.push("features", Tensor::matrix(1, 2, vec![1.0, -2.5]));
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"NEFM");
        assert_eq!(bytes[4], 1);
        let hlen = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let payload = &bytes[9 + hlen..];
        assert_eq!(payload.len(), 16);
        assert_eq!(f64::from_le_bytes(payload[8..16].try_into().unwrap()), -2.5);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Container::from_bytes(b"XXXX\x01\0\0\0\0").is_err());
        let mut c = Container::new("x");
        c.push("a", Tensor::zeros(&[3, 3]));
        let bytes = c.to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_preserves_f64_bits(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * cols)
                .map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2))
                .map(|x| if x.is_finite() { x } else { 0.0 })
                .collect();
            let mut c = Container::new("t").with_meta("seed", seed);
            c.push("m", Tensor::matrix(rows, cols, data));
            c.push_f32("m32", Tensor::matrix(1, 1, vec![0.5]));
            let back = Container::from_bytes(&c.to_bytes()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
