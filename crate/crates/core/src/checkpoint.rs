//! Binary parameter blobs.
//!
//! Layout: the 8-byte magic `MSDAPRM1`, a little-endian `u64` header length,
//! a JSON header, then every parameter as little-endian `f32` in header
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

const MAGIC: &[u8; 8] = b"MSDAPRM1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    meta: serde_json::Value,
    params: Vec<Entry>,
}

/// Serialises the listed parameters with free-form metadata.
pub fn encode<T: Scalar>(
    store: &ParamStore<T>,
    ids: &[ParamId],
    meta: serde_json::Value,
) -> Result<Vec<u8>> {
    let mut params = Vec::with_capacity(ids.len());
    let mut offset = 0;
    for &id in ids {
        let m = store.get(id);
        params.push(Entry {
            name: store.name(id).to_string(),
            rows: m.rows(),
            cols: m.cols(),
            offset,
        });
        offset += m.len();
    }
    let header = serde_json::to_vec(&Header {
        format: "f32-le".into(),
        meta,
        params,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + 4 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for &id in ids {
        for v in store.get(id).as_slice() {
            let f = v.to_f32().ok_or_else(|| Error::Checkpoint("value not representable".into()))?;
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parameters and metadata read back from a blob.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob<T> {
    pub meta: serde_json::Value,
    pub params: Vec<(String, Matrix<T>)>,
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Blob<T>> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a parameter blob (bad magic)"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body])?;
    if header.format != "f32-le" {
        return Err(bad(&format!("unsupported format {}", header.format)));
    }
    let data = &bytes[body..];
    let mut params = Vec::with_capacity(header.params.len());
    for e in header.params {
        let n = e.rows * e.cols;
        let start = 4 * e.offset;
        let end = start + 4 * n;
        if end > data.len() {
            return Err(bad(&format!("parameter {} runs past the end of the blob", e.name)));
        }
        let values: Vec<T> = data[start..end]
            .chunks_exact(4)
            .map(|c| T::lit(f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))))
            .collect();
        params.push((e.name, Matrix::from_vec(e.rows, e.cols, values)));
    }
    Ok(Blob {
        meta: header.meta,
        params,
    })
}

pub fn save<T: Scalar>(
    path: &Path,
    store: &ParamStore<T>,
    ids: &[ParamId],
    meta: serde_json::Value,
) -> Result<()> {
    write_atomic(path, &encode(store, ids, meta)?)
}

pub fn load<T: Scalar>(path: &Path) -> Result<Blob<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Copies every parameter of `blob` into the same-named slot of `store`.
pub fn restore<T: Scalar>(store: &mut ParamStore<T>, blob: &Blob<T>) -> Result<()> {
    for (name, value) in &blob.params {
        let id = store
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        let slot = store.get_mut(id);
        if slot.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} is {:?} in the blob but {:?} in the model",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value.clone();
    }
    Ok(())
}
