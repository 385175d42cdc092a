use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{InceptionConfig, Model, ParamEntry};
use super::tensor::Scalar;
use crate::error::{data, Result};

const MAGIC: &[u8; 4] = b"USNN";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: InceptionConfig,
    params: Vec<ParamEntry>,
    buffers: Vec<ParamEntry>,
}

/// Layout: magic `USNN`, u32 version, u32 manifest length, JSON manifest
/// (architecture plus parameter and buffer tables), then parameters and
/// buffers as little-endian f32 in manifest order.
pub fn encode_weights<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let manifest = Manifest {
        config: model.config.clone(),
        params: model.params.entries.clone(),
        buffers: model.params.buffer_entries.clone(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(12 + json.len() + 4 * (model.params.len() + model.params.buffers.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in model.params.values.iter().chain(&model.params.buffers) {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode_weights<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(data("not a weight file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(data(format!("unsupported weight file version {version}")));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(12..12 + len).ok_or_else(|| data("weight file manifest is truncated"))?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| data(format!("weight file manifest: {e}")))?;
    let mut model = Model::<T>::new(manifest.config, 0)?;
    if manifest.params != model.params.entries || manifest.buffers != model.params.buffer_entries {
        return Err(data("weight file manifest does not match its architecture"));
    }
    let body = &bytes[12 + len..];
    let (np, nb) = (model.params.len(), model.params.buffers.len());
    if body.len() != 4 * (np + nb) {
        return Err(data(format!("weight file holds {} bytes of values, expected {}", body.len(), 4 * (np + nb))));
    }
    let mut vals = body.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64));
    for v in model.params.values.iter_mut().chain(model.params.buffers.iter_mut()) {
        *v = vals.next().expect("length checked");
    }
    Ok(model)
}

pub fn save_weights<T: Scalar>(path: &Path, model: &Model<T>) -> Result<()> {
    std::fs::write(path, encode_weights(model))?;
    Ok(())
}

pub fn load_weights<T: Scalar>(path: &Path) -> Result<Model<T>> {
    decode_weights(&std::fs::read(path)?)
}
