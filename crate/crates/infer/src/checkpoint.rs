//! Versioned binary checkpoints: config echo, run metadata, and every
//! weight tensor with shape information. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{InferError, Result};
use crate::net::NetParams;

const MAGIC: &[u8; 8] = b"MJPCKPT1";
const FORMAT_VERSION: u32 = 1;

/// Run metadata stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub dataset_sha256: String,
    pub seed: u64,
}

/// Trained parameters plus the config and metadata needed to reuse them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
    pub params: NetParams,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let config_text =
        toml::to_string(&ckpt.config).map_err(|e| InferError::Corrupt(format!("config: {e}")))?;
    let meta_text =
        toml::to_string(&ckpt.meta).map_err(|e| InferError::Corrupt(format!("meta: {e}")))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(config_text.len() as u32).to_le_bytes())?;
    w.write_all(config_text.as_bytes())?;
    w.write_all(&(meta_text.len() as u32).to_le_bytes())?;
    w.write_all(meta_text.as_bytes())?;

    let tensors = ckpt.params.named_tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, tensor) in tensors {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.nrows() as u64).to_le_bytes())?;
        w.write_all(&(tensor.ncols() as u64).to_le_bytes())?;
        for &x in tensor.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(InferError::Corrupt("bad magic".into()));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    if u32::from_le_bytes(u32b) != FORMAT_VERSION {
        return Err(InferError::Corrupt("unsupported version".into()));
    }

    let read_text = |r: &mut BufReader<File>| -> Result<String> {
        let mut u32b = [0u8; 4];
        r.read_exact(&mut u32b)?;
        let mut buf = vec![0u8; u32::from_le_bytes(u32b) as usize];
        r.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|e| InferError::Corrupt(format!("text: {e}")))
    };
    let config: ModelConfig = toml::from_str(&read_text(&mut r)?)
        .map_err(|e| InferError::Corrupt(format!("config: {e}")))?;
    config.validate()?;
    let meta: CheckpointMeta = toml::from_str(&read_text(&mut r)?)
        .map_err(|e| InferError::Corrupt(format!("meta: {e}")))?;

    r.read_exact(&mut u32b)?;
    let n_tensors = u32::from_le_bytes(u32b) as usize;

    // Load into a skeleton with the right shapes, then verify names.
    let mut params = NetParams::init(&config, 0);
    {
        let expected: Vec<String> = params.named_tensors().iter().map(|(n, _)| n.clone()).collect();
        if expected.len() != n_tensors {
            return Err(InferError::Corrupt(format!(
                "tensor count {n_tensors}, expected {}",
                expected.len()
            )));
        }
        let mut slots = params.tensors_mut();
        for (idx, slot) in slots.iter_mut().enumerate() {
            let mut u16b = [0u8; 2];
            r.read_exact(&mut u16b)?;
            let mut name = vec![0u8; u16::from_le_bytes(u16b) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| InferError::Corrupt(e.to_string()))?;
            if name != expected[idx] {
                return Err(InferError::Corrupt(format!(
                    "tensor {idx} named {name}, expected {}",
                    expected[idx]
                )));
            }
            let mut u64b = [0u8; 8];
            r.read_exact(&mut u64b)?;
            let rows = u64::from_le_bytes(u64b) as usize;
            r.read_exact(&mut u64b)?;
            let cols = u64::from_le_bytes(u64b) as usize;
            if (rows, cols) != (slot.nrows(), slot.ncols()) {
                return Err(InferError::Corrupt(format!(
                    "tensor {name} shaped {rows}x{cols}, expected {}x{}",
                    slot.nrows(),
                    slot.ncols()
                )));
            }
            let mut data = vec![0u8; rows * cols * 8];
            r.read_exact(&mut data)?;
            let values: Vec<f64> = data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            **slot = Array2::from_shape_vec((rows, cols), values)
                .map_err(|e| InferError::Corrupt(e.to_string()))?;
        }
    }
    let mut tail = Vec::new();
    r.read_to_end(&mut tail)?;
    if !tail.is_empty() {
        return Err(InferError::Corrupt(format!("{} trailing bytes", tail.len())));
    }

    Ok(Checkpoint { config, meta, params })
}
