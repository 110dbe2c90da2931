//! Model files: one JSON header line followed by the JSON payload.
//!
//! The header carries the format tag, version, payload length and the
//! SHA-256 of the payload bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CicadaError, Result};

use super::model::{Model, MODEL_VERSION};

const FORMAT: &str = "cicada-model";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    len: usize,
    sha256: String,
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn model_to_bytes(model: &Model) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(model)
        .map_err(|e| CicadaError::CorruptFile(format!("cannot encode model: {e}")))?;
    let header = Header {
        format: FORMAT.into(),
        version: MODEL_VERSION,
        len: payload.len(),
        sha256: digest(&payload),
    };
    let mut out = serde_json::to_vec(&header)
        .map_err(|e| CicadaError::CorruptFile(format!("cannot encode header: {e}")))?;
    out.push(b'\n');
    out.extend(payload);
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CicadaError::CorruptFile("missing header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..split])
        .map_err(|e| CicadaError::CorruptFile(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(CicadaError::CorruptFile(format!(
            "unexpected format tag `{}`",
            header.format
        )));
    }
    if header.version != MODEL_VERSION {
        return Err(CicadaError::VersionMismatch {
            found: header.version,
            expected: MODEL_VERSION,
        });
    }
    let payload = &bytes[split + 1..];
    if payload.len() != header.len {
        return Err(CicadaError::CorruptFile(format!(
            "payload has {} bytes, header says {}",
            payload.len(),
            header.len
        )));
    }
    if digest(payload) != header.sha256 {
        return Err(CicadaError::CorruptFile("checksum mismatch".into()));
    }
    let model: Model = serde_json::from_slice(payload)
        .map_err(|e| CicadaError::CorruptFile(format!("bad payload: {e}")))?;
    if model.version != MODEL_VERSION {
        return Err(CicadaError::VersionMismatch {
            found: model.version,
            expected: MODEL_VERSION,
        });
    }
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    model_from_bytes(&fs::read(path)?)
}
