//! Named-tensor weight container.
//!
//! ```text
//! magic    8 bytes   "XSSABWT\0"
//! version  u32 LE    1
//! hlen     u64 LE    length of the JSON header in bytes
//! header   hlen      {"kind", "metadata", "tensors": [{"name","shape","offset","len"}]}
//! payload  8·Σlen    f64 little-endian, tensors back to back in header order
//! ```
//!
//! `offset`/`len` count f64 elements from the start of the payload. The file
//! must end exactly after the payload.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"XSSABWT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self {
            name: name.into(),
            shape,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightFile {
    pub kind: String,
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

impl WeightFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for t in &self.tensors {
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
                len: t.values.len(),
            });
            offset += t.values.len();
        }
        let header = Header {
            kind: self.kind.clone(),
            metadata: self.metadata.clone(),
            tensors: entries,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");

        let mut out = Vec::with_capacity(20 + header.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::load(path, reason);
        if bytes.len() < 20 {
            return Err(bad(format!(
                "truncated: {} bytes is shorter than the preamble",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("not a weight container (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported container version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated: header extends past end of file".into()));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| bad(format!("malformed header: {e}")))?;
        let payload = &body[hlen..];

        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected_offset = 0usize;
        let mut seen = BTreeSet::new();
        for entry in header.tensors {
            if !seen.insert(entry.name.clone()) {
                return Err(bad(format!("duplicate tensor `{}`", entry.name)));
            }
            let count: usize = entry.shape.iter().product();
            if count != entry.len {
                return Err(bad(format!(
                    "tensor `{}` has shape {:?} but length {}",
                    entry.name, entry.shape, entry.len
                )));
            }
            if entry.offset != expected_offset {
                return Err(bad(format!(
                    "tensor `{}` has non-contiguous offset",
                    entry.name
                )));
            }
            let start = entry.offset * 8;
            let end = start + entry.len * 8;
            if end > payload.len() {
                return Err(bad(format!(
                    "truncated: tensor `{}` extends past end of file",
                    entry.name
                )));
            }
            let values = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor {
                name: entry.name,
                shape: entry.shape,
                values,
            });
            expected_offset += entry.len;
        }
        if expected_offset * 8 != payload.len() {
            return Err(bad(format!(
                "payload is {} bytes, header describes {}",
                payload.len(),
                expected_offset * 8
            )));
        }
        Ok(Self {
            kind: header.kind,
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn metadata_usize(&self, key: &str, path: &Path) -> Result<usize> {
        self.metadata
            .get(key)
            .ok_or_else(|| Error::load(path, format!("missing metadata `{key}`")))?
            .parse()
            .map_err(|_| Error::load(path, format!("metadata `{key}` is not an integer")))
    }
}

/// Pulls tensors out of a [`WeightFile`] by name, enforcing shapes and
/// rejecting names the model does not know.
pub(crate) struct TensorReader<'a> {
    path: &'a Path,
    tensors: BTreeMap<&'a str, &'a NamedTensor>,
}

impl<'a> TensorReader<'a> {
    pub(crate) fn new(file: &'a WeightFile, path: &'a Path, known: &[&str]) -> Result<Self> {
        for t in &file.tensors {
            if !known.contains(&t.name.as_str()) {
                return Err(Error::load(path, format!("unknown tensor `{}`", t.name)));
            }
        }
        let tensors = file.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        Ok(Self { path, tensors })
    }

    pub(crate) fn take(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::load(self.path, format!("missing tensor `{name}`")))?;
        if t.shape != shape {
            return Err(Error::load(
                self.path,
                format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape, shape
                ),
            ));
        }
        if t.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::load(
                self.path,
                format!("tensor `{name}` has non-finite values"),
            ));
        }
        Ok(t.values.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightFile {
        WeightFile {
            kind: "linear-toy".into(),
            metadata: [("height".to_string(), "2".to_string())].into(),
            tensors: vec![
                NamedTensor::new("a", vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]),
                NamedTensor::new("b", vec![1], vec![0.1]),
            ],
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let f = sample();
        let back = WeightFile::from_bytes(&f.to_bytes(), Path::new("x")).unwrap();
        assert_eq!(back.kind, f.kind);
        assert_eq!(back.metadata, f.metadata);
        for (a, b) in f.tensors.iter().zip(&back.tensors) {
            let bits_a: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn truncation_detected_at_every_length() {
        let bytes = sample().to_bytes();
        for cut in 0..bytes.len() {
            assert!(
                WeightFile::from_bytes(&bytes[..cut], Path::new("x")).is_err(),
                "cut at {cut} accepted"
            );
        }
    }

    #[test]
    fn trailing_garbage_rejected() {
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert!(WeightFile::from_bytes(&bytes, Path::new("x")).is_err());
    }

    #[test]
    fn reader_names_unknown_and_missing_tensors() {
        let f = sample();
        let p = Path::new("w.bin");
        let err = TensorReader::new(&f, p, &["a"]).err().unwrap();
        assert!(err.to_string().contains("unknown tensor `b`"));
        let r = TensorReader::new(&f, p, &["a", "b", "c"]).unwrap();
        assert!(r
            .take("c", &[1])
            .unwrap_err()
            .to_string()
            .contains("missing tensor `c`"));
        assert!(r
            .take("a", &[4])
            .unwrap_err()
            .to_string()
            .contains("tensor `a` has shape"));
    }
}
