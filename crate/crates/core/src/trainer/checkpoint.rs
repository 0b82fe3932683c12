//! Binary checkpoint container.
//!
//! Layout: `MAGIC`, `u32` format version, `u64` header length, JSON header
//! (model configuration, training metadata, tensor names and shapes), the
//! tensors as little-endian `f32` in header order, and a SHA-256 digest of
//! every preceding byte. All integers are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::SplitRatios;
use crate::io::write_atomic;
use crate::models::{ModelConfig, ModelError, ScriptClassifier};
use crate::nn::Parameters;

pub const MAGIC: &[u8; 8] = b"SCRNETCK";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const PREFIX_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {found} (this build reads {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Training context stored alongside the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epoch: usize,
    pub validation_error: f64,
    /// Seed that drove initialization, splitting and shuffling.
    pub seed: u64,
    pub split_ratios: SplitRatios,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ScriptClassifier<f32>,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    metadata: TrainingMetadata,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let tensors = ckpt.model.params.tensors();
    let header = Header {
        format_version: FORMAT_VERSION,
        config: ckpt.model.config,
        metadata: ckpt.metadata,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < PREFIX_LEN + DIGEST_LEN {
        return Err(CheckpointError::Integrity(format!(
            "file too short ({} bytes)",
            bytes.len()
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Integrity("checksum mismatch".into()));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let payload_start = PREFIX_LEN
        .checked_add(header_len)
        .filter(|&end| end <= body.len())
        .ok_or_else(|| CheckpointError::Header("header length exceeds file".into()))?;
    let header: Header = serde_json::from_slice(&body[PREFIX_LEN..payload_start])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: header.format_version,
        });
    }

    let mut model = ScriptClassifier::<f32>::zeros(header.config)?;
    let mut payload = &body[payload_start..];
    {
        let mut tensors = model.params.tensors_mut();
        if tensors.len() != header.tensors.len() {
            return Err(CheckpointError::Header(format!(
                "{} tensors stored, configuration needs {}",
                header.tensors.len(),
                tensors.len()
            )));
        }
        for ((name, t), entry) in tensors.iter_mut().zip(&header.tensors) {
            if *name != entry.name || t.shape() != entry.shape.as_slice() {
                return Err(CheckpointError::Header(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    entry.name,
                    entry.shape,
                    name,
                    t.shape()
                )));
            }
            let n = t.len() * 4;
            if payload.len() < n {
                return Err(CheckpointError::Header(format!(
                    "payload ends inside tensor {name}"
                )));
            }
            for (v, chunk) in t.data_mut().iter_mut().zip(payload[..n].chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
            payload = &payload[n..];
        }
    }
    if !payload.is_empty() {
        return Err(CheckpointError::Header(format!(
            "{} trailing payload bytes",
            payload.len()
        )));
    }
    Ok(Checkpoint {
        model,
        metadata: header.metadata,
    })
}

/// Written to a temporary file and renamed into place.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    write_atomic(path, &encode_checkpoint(ckpt)).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    decode_checkpoint(&bytes)
}
