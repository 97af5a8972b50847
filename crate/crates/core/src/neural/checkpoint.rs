//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "RCMBCKPT"
//! version    u32      1
//! header_len u64      length of the JSON header
//! header     UTF-8 JSON {"config": .., "input_vocab": [..], "output_vocab": [..]}
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name UTF-8
//!   rows u64, cols u64
//!   rows * cols f64 values, row-major
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::linalg::Matrix;
use super::model::{ModelConfig, Seq2Seq};
use super::params::{Dims, ModelParams};
use super::NeuralError;
use crate::corpus::Vocabulary;

pub const MAGIC: &[u8; 8] = b"RCMBCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    input_vocab: Vocabulary,
    output_vocab: Vocabulary,
}

pub fn write_checkpoint<W: Write>(model: &Seq2Seq, mut w: W) -> Result<(), NeuralError> {
    let header = Header {
        config: model.config.clone(),
        input_vocab: model.input_vocab.clone(),
        output_vocab: model.output_vocab.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let tensors = model.params.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows() as u64).to_le_bytes())?;
        w.write_all(&(t.cols() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(t.data().len() * 8);
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NeuralError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NeuralError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn bad(msg: impl Into<String>) -> NeuralError {
    NeuralError::Checkpoint(msg.into())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Seq2Seq, NeuralError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let len = read_u64(&mut r)?;
    if len > 1 << 32 {
        return Err(bad("header too large"));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
    let dims = Dims {
        input_vocab: header.input_vocab.len(),
        output_vocab: header.output_vocab.len(),
        embed: header.config.embed_dim,
        hidden: header.config.hidden,
    };
    let mut params = ModelParams::zeros(dims);
    let count = read_u32(&mut r)? as usize;
    if count != ModelParams::NAMES.len() {
        return Err(bad(format!("expected {} tensors, found {count}", ModelParams::NAMES.len())));
    }
    for (expected, slot) in params.tensors_mut() {
        let n = read_u32(&mut r)? as usize;
        if n > 256 {
            return Err(bad("tensor name too long"));
        }
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        if name != expected.as_bytes() {
            return Err(bad(format!("expected tensor {expected}, found {}", String::from_utf8_lossy(&name))));
        }
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        if (rows, cols) != slot.shape() {
            return Err(bad(format!("tensor {expected} has shape {rows}x{cols}, expected {:?}", slot.shape())));
        }
        let mut raw = vec![0u8; rows * cols * 8];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        *slot = Matrix::from_vec(rows, cols, data);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes after last tensor"));
    }
    Seq2Seq::from_parts(header.config, header.input_vocab, header.output_vocab, params)
}

pub fn save_checkpoint(model: &Seq2Seq, path: &Path) -> Result<(), NeuralError> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Seq2Seq, NeuralError> {
    read_checkpoint(fs::read(path)?.as_slice())
}
