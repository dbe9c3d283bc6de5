//! Versioned model checkpoint container.
//!
//! Layout:
//!
//! ```text
//! magic     8 bytes   b"RULCKPT\0"
//! version   u32 LE
//! hdr_len   u64 LE
//! header    hdr_len bytes of JSON: { config, dtype, tensors: [{name, kind, shape, offset, len, sha256}] }
//! payload   concatenated little-endian f64 arrays, in manifest order
//! ```
//!
//! Values are stored at full f64 width so a reload is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, TcnConfig};
use crate::tensorcore::Tensor;

pub const MAGIC: &[u8; 8] = b"RULCKPT\0";
pub const VERSION: u32 = 1;
const DTYPE: &str = "f64le";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TensorKind {
    Param,
    Buffer,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    kind: TensorKind,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
    /// Byte length.
    len: usize,
    sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: TcnConfig,
    dtype: String,
    tensors: Vec<ManifestEntry>,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes parameters and batch-norm buffers of `model`.
pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut copy = model.clone();
    let n_params = copy.named_params_mut().len();
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (i, (name, tensor)) in model.state().into_iter().enumerate() {
        let start = payload.len();
        for v in tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(ManifestEntry {
            name,
            kind: if i < n_params { TensorKind::Param } else { TensorKind::Buffer },
            shape: tensor.shape().to_vec(),
            offset: start,
            len: payload.len() - start,
            sha256: hex_digest(&payload[start..]),
        });
    }
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        dtype: DTYPE.into(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(20 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corruption(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic or too short)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt(format!("checkpoint version {version}, expected {VERSION}")));
    }
    let hdr_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let hdr_end = 20usize
        .checked_add(hdr_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("header extends past end of file"))?;
    let header: Header =
        serde_json::from_slice(&bytes[20..hdr_end]).map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    if header.dtype != DTYPE {
        return Err(corrupt(format!("unsupported dtype {:?}", header.dtype)));
    }
    let payload = &bytes[hdr_end..];
    let expected_payload: usize = header.tensors.iter().map(|t| t.len).sum();
    if payload.len() != expected_payload {
        return Err(corrupt(format!(
            "payload is {} bytes, manifest describes {expected_payload}",
            payload.len()
        )));
    }

    let mut model = Model::with_seed(header.config.clone(), 0).map_err(|e| corrupt(format!("stored config: {e}")))?;
    let mut seen = std::collections::HashSet::new();
    for entry in &header.tensors {
        let end = entry
            .offset
            .checked_add(entry.len)
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| corrupt(format!("tensor {} out of bounds", entry.name)))?;
        let raw = &payload[entry.offset..end];
        if hex_digest(raw) != entry.sha256 {
            return Err(corrupt(format!("checksum mismatch for tensor {}", entry.name)));
        }
        if raw.len() % 8 != 0 || raw.len() / 8 != entry.shape.iter().product::<usize>() {
            return Err(corrupt(format!("tensor {} has inconsistent length", entry.name)));
        }
        if !seen.insert(entry.name.clone()) {
            return Err(corrupt(format!("tensor {} appears twice", entry.name)));
        }
    }

    let lookup = |name: &str| header.tensors.iter().find(|e| e.name == name);
    let assign = |name: &str, target: &mut Tensor| -> Result<()> {
        let entry = lookup(name).ok_or_else(|| corrupt(format!("tensor {name} missing")))?;
        if entry.shape != target.shape() {
            return Err(corrupt(format!(
                "tensor {name} has shape {:?}, config implies {:?}",
                entry.shape,
                target.shape()
            )));
        }
        let raw = &payload[entry.offset..entry.offset + entry.len];
        for (dst, chunk) in target.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(())
    };
    let mut expected = 0usize;
    for (name, p) in model.named_params_mut() {
        assign(&name, &mut p.value)?;
        expected += 1;
    }
    for (name, t) in model.named_buffers_mut() {
        assign(&name, t)?;
        expected += 1;
    }
    if expected != header.tensors.len() {
        return Err(corrupt(format!(
            "manifest holds {} tensors, model has {expected}",
            header.tensors.len()
        )));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and insists that it was built from `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &TcnConfig) -> Result<Model> {
    let model = load_checkpoint(path)?;
    if model.config() != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint holds {:?}, run expects {:?}",
            model.config(),
            expected
        )));
    }
    Ok(model)
}
