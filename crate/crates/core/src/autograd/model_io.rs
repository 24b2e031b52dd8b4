//! CUTM model files: a JSON manifest plus a sidecar blob of little-endian f64s.
//!
//! The manifest lives at the given path; the blob sits next to it with a
//! `.bin` suffix appended to the full file name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::write_atomic;

use super::params::ParamStore;
use super::tensor::Tensor;

pub const MAGIC: &str = "CUTM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub magic: String,
    pub version: u32,
    pub blob: String,
    pub blob_bytes: usize,
    pub meta: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

pub fn blob_path(manifest: &Path) -> PathBuf {
    let mut name = manifest.file_name().unwrap_or_default().to_os_string();
    name.push(".bin");
    manifest.with_file_name(name)
}

/// Encodes the store to (manifest JSON bytes, blob bytes).
pub fn encode(
    store: &ParamStore,
    blob_name: &str,
    meta: serde_json::Value,
) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut blob = Vec::with_capacity(store.num_scalars() * 8);
    let mut params = Vec::with_capacity(store.len());
    for p in store.iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: blob.len(),
        });
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        magic: MAGIC.into(),
        version: VERSION,
        blob: blob_name.into(),
        blob_bytes: blob.len(),
        meta,
        params,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    Ok((json, blob))
}

pub fn decode(manifest: &[u8], blob: &[u8]) -> Result<(Manifest, Vec<(String, Tensor)>)> {
    let manifest: Manifest = serde_json::from_slice(manifest)?;
    if manifest.magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC.into(),
            found: manifest.magic,
        });
    }
    if manifest.version != VERSION {
        return Err(Error::UnsupportedVersion(manifest.version));
    }
    if blob.len() != manifest.blob_bytes {
        return Err(Error::Truncated {
            expected: manifest.blob_bytes,
            found: blob.len(),
        });
    }
    let mut out = Vec::with_capacity(manifest.params.len());
    for e in &manifest.params {
        let n: usize = e.shape.iter().product();
        let end = e.offset + n * 8;
        if end > blob.len() {
            return Err(Error::Truncated {
                expected: end,
                found: blob.len(),
            });
        }
        let data = blob[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
    }
    Ok((manifest, out))
}

pub fn save(path: &Path, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let blob_file = blob_path(path);
    let blob_name = blob_file
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (json, blob) = encode(store, &blob_name, meta)?;
    write_atomic(&blob_file, &blob)?;
    write_atomic(path, &json)
}

pub fn load(path: &Path) -> Result<(Manifest, Vec<(String, Tensor)>)> {
    let json = std::fs::read(path)?;
    let probe: Manifest = serde_json::from_slice(&json)?;
    let blob = std::fs::read(path.with_file_name(&probe.blob))?;
    decode(&json, &blob)
}

/// Copies loaded tensors into a store whose names and shapes must match exactly.
pub fn assign(store: &mut ParamStore, tensors: Vec<(String, Tensor)>) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(Error::Model(format!(
            "parameter count mismatch: file has {}, model has {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let id = store.id(&name)?;
        let dst = store.value_mut(id);
        if dst.shape() != t.shape() {
            return Err(Error::Model(format!(
                "shape mismatch for `{name}`: file {:?}, model {:?}",
                t.shape(),
                dst.shape()
            )));
        }
        *dst = t;
    }
    Ok(())
}
