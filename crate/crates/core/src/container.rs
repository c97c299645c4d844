//! `FLOW1` binary container for named tensors.
//!
//! ```text
//! "FLOW1"
//! u32 meta_len, meta_len bytes of UTF-8 `key=value\n` lines (sorted by key)
//! u32 tensor_count
//! per tensor: u32 name_len, name, u32 rank, rank x u32 dims, numel x f32
//! ```
//!
//! All integers and floats are little-endian. Checkpoints, snapshots,
//! uncertainty fields and mosaics all use this layout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const MAGIC: &str = "FLOW1";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_tensor<T: Real>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        Self { name: name.into(), shape: t.shape().to_vec(), data: t.data().iter().map(|v| v.f64() as f32).collect() }
    }

    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        Tensor::new(&self.shape, self.data.iter().map(|&v| T::of(v as f64)).collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn meta_get(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC.as_bytes());
        let meta: String = self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_u32(&mut out, meta.len());
        out.extend_from_slice(meta.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for t in &self.tensors {
            put_u32(&mut out, t.name.len());
            out.extend_from_slice(t.name.as_bytes());
            put_u32(&mut out, t.shape.len());
            for &d in &t.shape {
                put_u32(&mut out, d);
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        // a clean prefix of the magic is a cut-off file, anything else is foreign
        if bytes.len() < MAGIC.len() && MAGIC.as_bytes().starts_with(bytes) {
            return Err(Error::Truncated { path: path.to_path_buf(), what: "magic".into() });
        }
        if r.take(MAGIC.len(), "magic").ok() != Some(MAGIC.as_bytes()) {
            return Err(Error::BadMagic { path: path.to_path_buf(), expected: MAGIC });
        }
        let meta_len = r.u32("metadata length")?;
        let meta_bytes = r.take(meta_len, "metadata")?;
        let meta_text = std::str::from_utf8(meta_bytes).map_err(|_| r.malformed("metadata is not UTF-8"))?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| r.malformed(&format!("metadata line `{line}`")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let name_len = r.u32("tensor name length")?;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| r.malformed("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32("tensor rank")?;
            if rank == 0 || rank > 16 {
                return Err(Error::FormatDimension { path: path.to_path_buf(), detail: format!("tensor {i} rank {rank}") });
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("tensor dims")?);
            }
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).filter(|&n| n > 0);
            let Some(numel) = numel else {
                return Err(Error::FormatDimension { path: path.to_path_buf(), detail: format!("`{name}` shape {shape:?}") });
            };
            let raw = r.take(numel.saturating_mul(4), &format!("tensor `{name}`"))?;
            let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(r.malformed(&format!("tensor `{name}` holds non-finite values")));
            }
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(r.malformed("trailing bytes after last tensor"));
        }
        Ok(Self { meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp: PathBuf = path.to_path_buf();
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    tmp.set_file_name(name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("container field exceeds u32").to_le_bytes());
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
    pub path: &'a Path,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated { path: self.path.to_path_buf(), what: what.to_string() });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    pub fn malformed(&self, detail: &str) -> Error {
        Error::Malformed { path: self.path.to_path_buf(), detail: detail.to_string() }
    }
}
