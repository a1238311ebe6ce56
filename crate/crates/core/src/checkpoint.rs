//! Binary checkpoints: magic, little-endian header length, JSON header,
//! then every parameter as little-endian f64 in store order.
//!
//! The header's `checksum` is the SHA-256 of the header serialized with an
//! empty checksum field, followed by the payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Normalizer;
use crate::model::{ConfigError, Model, ModelConfig};
use crate::rng::seeded;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"STWACK01";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("checksum/shape mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in f64 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
    /// Payload length in f64 elements.
    pub payload_len: usize,
    pub normalizer: Option<NormalizerStats>,
    pub checksum: String,
}

/// A model together with the statistics needed to denormalize its outputs.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub normalizer: Option<Normalizer>,
}

fn checksum(header: &Header, payload: &[u8]) -> String {
    let mut unsigned = header.clone();
    unsigned.checksum.clear();
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&unsigned).expect("header serializes"));
    hasher.update(payload);
    hex::encode(hasher.finalize())
}

pub fn write(model: &Model, normalizer: Option<&Normalizer>, mut out: impl Write) -> Result<(), CheckpointError> {
    let mut params = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    for p in model.store().iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
        });
        offset += p.value.numel();
        for v in p.value.data().iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut header = Header {
        config: model.config().clone(),
        seed: model.config().seed,
        params,
        payload_len: offset,
        normalizer: normalizer.map(|n| NormalizerStats {
            mean: n.mean.clone(),
            std: n.std.clone(),
            features: n.features(),
        }),
        checksum: String::new(),
    };
    header.checksum = checksum(&header, &payload);
    let json = serde_json::to_vec(&header).expect("header serializes");
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    out.write_all(&payload)?;
    out.flush()?;
    Ok(())
}

pub fn read(mut input: impl Read) -> Result<Checkpoint, CheckpointError> {
    let mismatch = |msg: &str| CheckpointError::Mismatch(msg.to_string());
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(mismatch("not a checkpoint file"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if header_len > body.len() {
        return Err(mismatch("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..header_len]).map_err(|e| mismatch(&format!("unreadable header: {e}")))?;
    let payload = &body[header_len..];
    if payload.len() != header.payload_len * 8 {
        return Err(mismatch("payload length differs from header"));
    }
    if checksum(&header, payload) != header.checksum {
        return Err(mismatch("checksum differs"));
    }

    let mut model = Model::new(&header.config, &mut seeded(header.seed))?;
    if model.store().len() != header.params.len() {
        return Err(mismatch("parameter count differs from the architecture"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    for entry in &header.params {
        let id = model
            .store()
            .find(&entry.name)
            .ok_or_else(|| mismatch(&format!("unknown parameter `{}`", entry.name)))?;
        let expected = model.store().get(id).value.shape().to_vec();
        let numel: usize = entry.shape.iter().product();
        if entry.shape != expected || entry.offset + numel > values.len() {
            return Err(mismatch(&format!("parameter `{}` has shape {:?}, expected {expected:?}", entry.name, entry.shape)));
        }
        let tensor = Tensor::new(&entry.shape, values[entry.offset..entry.offset + numel].to_vec())
            .map_err(|e| mismatch(&e.to_string()))?;
        model.store_mut().set(id, tensor).map_err(|e| mismatch(&e.to_string()))?;
    }
    let normalizer = header
        .normalizer
        .map(|s| Normalizer::from_stats(s.mean, s.std, s.features));
    Ok(Checkpoint { model, normalizer })
}

pub fn save(model: &Model, normalizer: Option<&Normalizer>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path)?;
    write(model, normalizer, std::io::BufWriter::new(file))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    read(std::io::BufReader::new(std::fs::File::open(path)?))
}
