//! `CLDA1` checkpoints.
//!
//! Layout: the 5 magic bytes `CLDA1`, a little-endian `u64` header length,
//! the UTF-8 JSON header, then every tensor's values as little-endian `f64`
//! in header order. `byte_offset` is relative to the start of the payload.

use std::fs;
use std::path::Path;

use clda_core::model::{ModelConfig, TransformerModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 5] = b"CLDA1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(model: &TransformerModel) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut offset = 0u64;
    for (name, t) in model.tensor_names().into_iter().zip(model.tensors()) {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            byte_offset: offset,
        });
        offset += 8 * t.numel() as u64;
    }
    let header = CheckpointHeader {
        config: model.config.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<TransformerModel> {
    let bad = |msg: String| CliError::format(origin, msg);
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not a CLDA1 checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    len.copy_from_slice(&bytes[5..13]);
    let header_len = u64::from_le_bytes(len) as usize;
    let payload_start = 13usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[13..payload_start]).map_err(|e| bad(format!("bad header: {e}")))?;
    let payload = &bytes[payload_start..];
    let mut model = TransformerModel::zeros(header.config.clone()).map_err(|e| bad(e.to_string()))?;
    let names = model.tensor_names();
    if names.len() != header.tensors.len() {
        return Err(bad(format!(
            "expected {} tensors, header lists {}",
            names.len(),
            header.tensors.len()
        )));
    }
    let mut consumed = 0usize;
    for ((name, t), entry) in names.iter().zip(model.tensors_mut()).zip(&header.tensors) {
        if &entry.name != name || entry.shape != t.shape() {
            return Err(bad(format!(
                "tensor {:?} {:?} does not match expected {:?} {:?}",
                entry.name,
                entry.shape,
                name,
                t.shape()
            )));
        }
        let start = entry.byte_offset as usize;
        let end = start + 8 * t.numel();
        if end > payload.len() {
            return Err(bad(format!("payload truncated in tensor {name}")));
        }
        for (v, chunk) in t.data_mut().iter_mut().zip(payload[start..end].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        consumed += 8 * t.numel();
    }
    if consumed != payload.len() {
        return Err(bad(format!("{} trailing payload bytes", payload.len() - consumed)));
    }
    Ok(model)
}

pub fn save(path: &Path, model: &TransformerModel) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, encode(model)).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<TransformerModel> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab: 12,
            seq_len: 4,
            width: 6,
            mlp_width: 10,
            depth: 2,
            classes: 3,
        }
    }

    #[test]
    fn decode_inverts_encode_bitwise() {
        let m = TransformerModel::new(cfg(), 17).unwrap();
        let bytes = encode(&m);
        assert_eq!(&bytes[..5], b"CLDA1");
        let back = decode(&bytes, Path::new("mem")).unwrap();
        assert!(back.params_bitwise_eq(&m));
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"CLDA2xxxxxxxxxxxx", Path::new("x")).is_err());
        let m = TransformerModel::new(cfg(), 1).unwrap();
        let bytes = encode(&m);
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode(&longer, Path::new("x")).is_err());
    }
}
