//! Flat little-endian checkpoint format:
//!
//! ```text
//! "DTWM"  u32 version  u32 layer_count
//! per layer: u32 name_len, name bytes (UTF-8), u32 fan_in, u32 fan_out,
//!            fan_in*fan_out f64 weights (row-major), fan_out f64 biases
//! ```
//!
//! Activations are not stored: hidden layers load as ReLU and the last layer as linear.

use std::path::Path;

use thiserror::Error;

use super::model::{Activation, Layer, MlpModel};
use crate::linalg::Matrix;

const MAGIC: &[u8; 4] = b"DTWM";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint while reading {0}")]
    Truncated(&'static str),
    #[error("invalid checkpoint: {0}")]
    Invalid(String),
}

pub fn model_to_bytes(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + model.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        out.extend_from_slice(&(layer.name.len() as u32).to_le_bytes());
        out.extend_from_slice(layer.name.as_bytes());
        out.extend_from_slice(&(layer.fan_in() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.fan_out() as u32).to_le_bytes());
        for v in layer.weight.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &layer.bias {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated(what))?, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<MlpModel, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.u32("layer count")? as usize;
    if count == 0 {
        return Err(CheckpointError::Invalid("zero layers".into()));
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|e| CheckpointError::Invalid(format!("layer name: {e}")))?
            .to_string();
        let fan_in = r.u32("fan_in")? as usize;
        let fan_out = r.u32("fan_out")? as usize;
        let weights = r.f64s(fan_in * fan_out, "weights")?;
        let bias = r.f64s(fan_out, "biases")?;
        let weight = Matrix::new(fan_in, fan_out, weights)
            .map_err(|e| CheckpointError::Invalid(format!("layer {name}: {e}")))?;
        if !bias.iter().all(|b| b.is_finite()) {
            return Err(CheckpointError::Invalid(format!("layer {name}: non-finite bias")));
        }
        layers.push(Layer {
            name,
            weight,
            bias,
            activation: if i + 1 == count {
                Activation::None
            } else {
                Activation::Relu
            },
        });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Invalid(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    MlpModel::new(layers).map_err(|e| CheckpointError::Invalid(e.to_string()))
}

pub fn save_checkpoint(model: &MlpModel, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpModel, CheckpointError> {
    model_from_bytes(&std::fs::read(path)?)
}
