//! Binary checkpoints with a JSON manifest.
//!
//! Layout: 8-byte magic, `u32` LE version, `u32` LE header length, a JSON
//! header holding the model spec, then every parameter as `f64` LE in flat
//! order, then the SHA-256 of all preceding bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelSpec};
use crate::tensor::Real;

pub const MAGIC: &[u8; 8] = b"FADVCKPT";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    /// Precision the parameters were trained in.
    precision: String,
    count: usize,
}

/// Sidecar metadata written next to each checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub epoch: usize,
    /// SHA-256 of the resolved configuration text, hex encoded.
    pub config_hash: String,
    /// Whether the stored parameters are the weight-averaged model.
    pub averaged: bool,
    pub spec: ModelSpec,
    pub precision: String,
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode<T: Real>(params: &ModelParams<T>) -> Vec<u8> {
    let header = Header {
        spec: params.spec().clone(),
        precision: T::NAME.to_string(),
        count: params.total_count(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 8 * params.total_count() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in params.values() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode<T: Real>(bytes: &[u8], path: &Path) -> Result<ModelParams<T>> {
    let fail = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.get(..8).is_some_and(|m| m != MAGIC) {
        return Err(fail(0, "bad magic, not a checkpoint".into()));
    }
    if bytes.len() < 16 + DIGEST_LEN {
        return Err(fail(0, format!("file too short for a checkpoint ({} bytes)", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(fail(8, format!("unsupported checkpoint version {version} (expected {VERSION})")));
    }
    let body = bytes.len() - DIGEST_LEN;
    if Sha256::digest(&bytes[..body]).as_slice() != &bytes[body..] {
        return Err(fail(body, "checksum mismatch, checkpoint is corrupted".into()));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let values_at = 16 + hlen;
    if values_at > body {
        return Err(fail(12, format!("header length {hlen} exceeds file")));
    }
    let header: Header =
        serde_json::from_slice(&bytes[16..values_at]).map_err(|e| fail(16, format!("bad header: {e}")))?;
    header.spec.validate()?;
    if header.count != header.spec.param_count() || body - values_at != 8 * header.count {
        return Err(fail(
            values_at,
            format!("expected {} parameters for spec {}, found {} bytes", header.spec.param_count(), header.spec, body - values_at),
        ));
    }
    let flat: Vec<T> = bytes[values_at..body]
        .chunks_exact(8)
        .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    ModelParams::from_flat(&header.spec, &flat)
}

pub fn save<T: Real>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<ModelParams<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Loads a checkpoint and checks its spec against `expected`.
pub fn load_expecting<T: Real>(path: &Path, expected: &ModelSpec) -> Result<ModelParams<T>> {
    let params = load::<T>(path)?;
    if params.spec() != expected {
        return Err(Error::SpecMismatch(format!(
            "checkpoint {} holds a {} model, config describes {}",
            path.display(),
            params.spec(),
            expected
        )));
    }
    Ok(params)
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
