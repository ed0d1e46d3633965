//! JSON model checkpoints. Weights are stored as base64 of little-endian
//! `f64` values behind an explicit shape header.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::net::{NetParams, HEAD_SIZE, INPUT_SIZE};
use crate::error::{Error, Result};

pub const FORMAT: &str = "hri-shield-lstm";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub input_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output_size: usize,
    pub scale: f64,
    pub num_weights: usize,
    pub weights_f64_le: String,
}

impl Checkpoint {
    pub fn from_params(p: &NetParams) -> Self {
        let bytes: Vec<u8> = p.weights.iter().flat_map(|w| w.to_le_bytes()).collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            input_size: INPUT_SIZE,
            hidden: p.hidden,
            layers: p.layers,
            output_size: HEAD_SIZE,
            scale: p.scale,
            num_weights: p.weights.len(),
            weights_f64_le: STANDARD.encode(bytes),
        }
    }

    pub fn into_params(self) -> Result<NetParams> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::InvalidInput(format!("unsupported checkpoint {} v{}", self.format, self.version)));
        }
        if self.input_size != INPUT_SIZE || self.output_size != HEAD_SIZE {
            return Err(Error::InvalidInput("checkpoint input/output sizes do not match the model".into()));
        }
        let bytes = STANDARD
            .decode(self.weights_f64_le.as_bytes())
            .map_err(|e| Error::InvalidInput(format!("checkpoint weights: {e}")))?;
        if bytes.len() != 8 * self.num_weights {
            return Err(Error::InvalidInput("checkpoint weight count mismatch".into()));
        }
        let weights = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let p = NetParams { hidden: self.hidden, layers: self.layers, scale: self.scale, weights };
        if !p.is_consistent() {
            return Err(Error::InvalidInput("checkpoint shape header does not match its weights".into()));
        }
        Ok(p)
    }
}

pub fn save(path: &Path, params: &NetParams) -> Result<()> {
    let json = serde_json::to_string_pretty(&Checkpoint::from_params(params))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<NetParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str::<Checkpoint>(&text)?.into_params()
}
