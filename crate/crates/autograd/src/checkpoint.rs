//! Versioned binary parameter files.
//!
//! Layout: the 8-byte magic `IRSBFCKP`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header
//! `{"meta": ..., "tensors": [{"name": ..., "shape": [...]}, ...]}`, then the
//! values of every tensor in header order as little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::params::ParamSet;
use crate::{Error, Result, Tensor};

pub const MAGIC: &[u8; 8] = b"IRSBFCKP";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

pub fn to_bytes(params: &ParamSet, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let header = Header {
        meta: meta.clone(),
        tensors: params.iter().map(|(n, t)| Entry { name: n.to_string(), shape: t.shape().to_vec() }).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * params.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ParamSet, serde_json::Value)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..).ok_or_else(|| bad("truncated header"))?;
    let json = body.get(..len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut data = &body[len..];
    let mut names = Vec::with_capacity(header.tensors.len());
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let raw = data.get(..8 * n).ok_or_else(|| bad("truncated tensor data"))?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        data = &data[8 * n..];
        tensors.push(Tensor::new(e.shape, values)?);
        names.push(e.name);
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok((ParamSet::from_parts(names, tensors), header.meta))
}

pub fn save(path: &Path, params: &ParamSet, meta: &serde_json::Value) -> Result<()> {
    std::fs::write(path, to_bytes(params, meta)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamSet, serde_json::Value)> {
    from_bytes(&std::fs::read(path)?)
}
