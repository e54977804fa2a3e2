//! Checkpoint file: magic, `u32` little-endian header length, JSON header,
//! then the weights as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::ToyDataset;
use super::net::{Architecture, ToyNet};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::io::write_atomic;

const MAGIC: &[u8; 8] = b"PFLOWCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub cond_arity: usize,
    pub param_count: usize,
    pub seed: u64,
    pub train: Option<TrainConfig>,
    pub dataset: Option<ToyDataset>,
}

impl CheckpointHeader {
    pub fn for_net(net: &ToyNet, train: Option<TrainConfig>, dataset: Option<ToyDataset>) -> Self {
        Self {
            architecture: net.architecture().clone(),
            cond_arity: net.architecture().cond_arity,
            param_count: net.params().len(),
            seed: train.as_ref().map_or(0, |t| t.seed),
            train,
            dataset,
        }
    }
}

pub fn encode_checkpoint(header: &CheckpointHeader, net: &ToyNet) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(12 + json.len() + net.params().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, ToyNet)> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let json = bytes
        .get(12..12 + len)
        .ok_or_else(|| Error::Format("checkpoint header truncated".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    let payload = &bytes[12 + len..];
    if payload.len() != header.param_count * 4 {
        return Err(Error::Format(format!(
            "checkpoint payload has {} bytes, header implies {}",
            payload.len(),
            header.param_count * 4
        )));
    }
    if header.cond_arity != header.architecture.cond_arity {
        return Err(Error::Format("condition arity disagrees with architecture".into()));
    }
    let params = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let net = ToyNet::from_params(header.architecture.clone(), params)?;
    Ok((header, net))
}

pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, net: &ToyNet) -> Result<()> {
    write_atomic(path, &encode_checkpoint(header, net)?)
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ToyNet)> {
    decode_checkpoint(&fs::read(path)?)
}
