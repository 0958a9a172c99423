//! Versioned binary container shared by every model file.
//!
//! Layout: the 8-byte magic `MICIDCF1`, a little-endian u64 header length,
//! the UTF-8 JSON header, then the payload. The payload is a sequence of
//! little-endian IEEE-754 f32 arrays; the header lists each array's name,
//! shape, byte offset (from the payload start) and element count, plus the
//! SHA-256 of the whole payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::seed::sha256_hex;

pub const MAGIC: &[u8; 8] = b"MICIDCF1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub format_version: u32,
    pub kind: String,
    pub meta: Value,
    pub arrays: Vec<ArrayEntry>,
    pub payload_bytes: u64,
    pub payload_sha256: String,
}

/// In-memory container: header metadata plus named f32 arrays in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Value,
    pub arrays: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Container {
    pub fn new(kind: &str, meta: Value) -> Self {
        Container {
            kind: kind.to_string(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.arrays.push((name.into(), shape, data));
    }

    pub fn push_f64(&mut self, name: impl Into<String>, shape: Vec<usize>, data: &[f64]) {
        self.push(name, shape, data.iter().map(|&v| v as f32).collect());
    }

    pub fn array(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn require(&self, name: &str) -> Result<(&[usize], &[f32])> {
        self.array(name).ok_or_else(|| {
            Error::format(
                format!("<{} container>", self.kind),
                format!("missing array `{name}`"),
            )
        })
    }

    pub fn require_f64(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.require(name)?.1.iter().map(|&v| v as f64).collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.arrays.len());
        for (name, shape, data) in &self.arrays {
            entries.push(ArrayEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset: payload.len() as u64,
                len: data.len() as u64,
            });
            for v in data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = ContainerHeader {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            arrays: entries,
            payload_bytes: payload.len() as u64,
            payload_sha256: sha256_hex(&payload),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header_bytes.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Container> {
        let bad = |reason: &str| Error::format(origin, reason.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a micid container (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: ContainerHeader = serde_json::from_slice(&body[..hlen])
            .map_err(|e| Error::format(origin, format!("bad header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::format(
                origin,
                format!("unsupported format version {}", header.format_version),
            ));
        }
        let payload = &body[hlen..];
        if payload.len() as u64 != header.payload_bytes {
            return Err(bad("payload length does not match header"));
        }
        if sha256_hex(payload) != header.payload_sha256 {
            return Err(bad("payload checksum mismatch"));
        }
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for a in &header.arrays {
            let start = a.offset as usize;
            let end = start + 4 * a.len as usize;
            if end > payload.len() || a.shape.iter().product::<usize>() as u64 != a.len {
                return Err(Error::format(origin, format!("array `{}` out of bounds", a.name)));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            arrays.push((a.name.clone(), a.shape.clone(), data));
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path, expected_kind: &str) -> Result<Container> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let c = Container::from_bytes(&fs::read(path)?, path)?;
        if c.kind != expected_kind {
            return Err(Error::format(
                path,
                format!("expected a {expected_kind} container, found {}", c.kind),
            ));
        }
        Ok(c)
    }
}

/// Reads a typed field from container metadata.
pub fn meta_field<T: serde::de::DeserializeOwned>(meta: &Value, key: &str) -> Result<T> {
    let v = meta
        .get(key)
        .ok_or_else(|| Error::format("<container meta>", format!("missing `{key}`")))?;
    serde_json::from_value(v.clone())
        .map_err(|e| Error::format("<container meta>", format!("field `{key}`: {e}")))
}
