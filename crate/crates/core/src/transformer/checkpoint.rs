//! Binary checkpoint: magic `TSYN1`, six little-endian u32 config fields
//! (layers, hidden_dim, heads, vocab_size, context_len, ffn_mult), then every
//! tensor in declaration order as little-endian f32.

use std::fs;
use std::path::Path;

use crate::scalar::Scalar;

use super::{ModelConfig, ModelError, ParamSet, TransformerModel, Weights};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"TSYN1";

pub fn encode_checkpoint<S: Scalar>(model: &TransformerModel<S>) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::with_capacity(5 + 24 + 4 * model.count_params() as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for field in [c.layers, c.hidden_dim, c.heads, c.vocab_size, c.context_len, c.ffn_mult] {
        out.extend_from_slice(&(field as u32).to_le_bytes());
    }
    for t in model.weights.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_f32_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TransformerModel<f32>, ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    if bytes.len() < 29 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(bad("missing TSYN1 header"));
    }
    let field = |i: usize| {
        let o = 5 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
    };
    let config = ModelConfig {
        layers: field(0),
        hidden_dim: field(1),
        heads: field(2),
        vocab_size: field(3),
        context_len: field(4),
        ffn_mult: field(5),
    };
    config.validate_inner(true)?;
    let body = &bytes[29..];
    if body.len() as u64 != 4 * config.param_count() {
        return Err(bad("tensor payload does not match config"));
    }
    let mut weights = Weights::<f32>::zeros(&config);
    let mut chunks = body.chunks_exact(4);
    for t in weights.tensors_mut() {
        for v in t.iter_mut() {
            *v = f32::from_le_bytes(chunks.next().expect("length checked").try_into().expect("4 bytes"));
        }
    }
    Ok(TransformerModel { config, weights })
}

pub fn write_checkpoint<S: Scalar>(model: &TransformerModel<S>, path: &Path) -> Result<(), ModelError> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<TransformerModel<f32>, ModelError> {
    decode_checkpoint(&fs::read(path)?)
}
