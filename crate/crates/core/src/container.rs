//! Versioned single-file container shared by every trained model.
//!
//! ```text
//! bytes 0..8    magic "NFCKPT\0\0"
//! bytes 8..12   u32 LE container version (1)
//! bytes 12..20  u64 LE manifest length L
//! next L bytes  UTF-8 JSON manifest: {"kind", "config", "blobs": [{"name", "shape", "offset"}]}
//! remainder     blob payloads, little-endian f32, row-major, in manifest order;
//!               `offset` counts f32 values from the start of the payload
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NFCKPT\0\0";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Blob {
    pub fn from_f64(name: impl Into<String>, m: &Array2<f64>) -> Self {
        Self {
            name: name.into(),
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_vec(name: impl Into<String>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn to_f64(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.iter().map(|&v| v as f64).collect())
            .expect("blob shape")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub config: serde_json::Value,
    pub blobs: Vec<Blob>,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    kind: String,
    config: serde_json::Value,
    blobs: Vec<BlobEntry>,
}

impl Container {
    pub fn new(kind: impl Into<String>, config: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            config,
            blobs: Vec::new(),
        }
    }

    pub fn push(&mut self, blob: Blob) {
        self.blobs.push(blob);
    }

    pub fn blob(&self, name: &str) -> Result<&Blob> {
        self.blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks blob '{name}'")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let entries = self
            .blobs
            .iter()
            .map(|b| {
                let e = BlobEntry {
                    name: b.name.clone(),
                    shape: [b.rows, b.cols],
                    offset,
                };
                offset += b.data.len();
                e
            })
            .collect();
        let manifest = serde_json::to_vec(&Manifest {
            kind: self.kind.clone(),
            config: self.config.clone(),
            blobs: entries,
        })?;
        let mut out = Vec::with_capacity(20 + manifest.len() + 4 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for b in &self.blobs {
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint container".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CONTAINER_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let manifest_end = 20usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[20..manifest_end])
            .map_err(|e| Error::Format(format!("malformed checkpoint manifest: {e}")))?;
        let payload = &bytes[manifest_end..];
        let mut blobs = Vec::with_capacity(manifest.blobs.len());
        for e in manifest.blobs {
            let n = e.shape[0] * e.shape[1];
            let (start, end) = (4 * e.offset, 4 * (e.offset + n));
            let raw = payload
                .get(start..end)
                .ok_or_else(|| Error::Format(format!("blob '{}' out of bounds", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blobs.push(Blob {
                name: e.name,
                rows: e.shape[0],
                cols: e.shape[1],
                data,
            });
        }
        Ok(Self {
            kind: manifest.kind,
            config: manifest.config,
            blobs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let mut c = Container::new("test", serde_json::json!({"a": 1, "b": [1.5, -2.0]}));
        c.push(Blob {
            name: "w".into(),
            rows: 2,
            cols: 3,
            data: vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5, 1e-30, -7.25],
        });
        c.push(Blob::from_vec("v", vec![0.1, 0.2]));
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.blob("w").unwrap().data[1].to_bits(), (-0.0f32).to_bits());
        assert!(back.blob("missing").is_err());
    }

    #[test]
    fn rejects_garbage() {
        assert!(Container::from_bytes(b"nope").is_err());
        let mut bytes = Container::new("x", serde_json::Value::Null).to_bytes().unwrap();
        bytes[8] = 9;
        assert!(Container::from_bytes(&bytes).unwrap_err().to_string().contains("version"));
    }
}
