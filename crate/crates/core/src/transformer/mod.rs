//! Decoder-only transformer: pre-LayerNorm residual blocks, learned positional
//! embeddings, GELU feed-forward, output head tied to the token embedding.
//!
//! Weight matrices are stored row-major as `[in][out]`, so a projection is
//! `y = x · W + b`.

mod attention;
mod checkpoint;
mod kernels;
mod model;
mod size;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use attention::{causal_attention, AttentionOutput};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use kernels::softmax_in_place as softmax_rows;
pub use model::{BackwardFault, ForwardCache};
pub use size::{
    calibrate_c, estimate_size, Calibration, FamilyConfig, PublishedExperiment, SizeEstimate, PUBLISHED_EXPERIMENTS,
    STANDARD_FAMILIES,
};

/// Standard deviation of the initial weight distribution.
pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("hidden dimension {hidden_dim} is not divisible by {heads} heads")]
    HeadsDoNotDivide { hidden_dim: usize, heads: usize },
    #[error("config field `{0}` must be positive")]
    NonPositive(&'static str),
    #[error("sequence of length {len} exceeds context length {context}")]
    SequenceTooLong { len: usize, context: usize },
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-positive size-model input")]
    NonPositiveSizeInput,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub context_len: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
}

fn default_ffn_mult() -> usize {
    4
}

impl ModelConfig {
    pub fn new(layers: usize, hidden_dim: usize, heads: usize, vocab_size: usize, context_len: usize) -> Self {
        ModelConfig {
            layers,
            hidden_dim,
            heads,
            vocab_size,
            context_len,
            ffn_mult: default_ffn_mult(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.validate_inner(false)
    }

    fn validate_inner(&self, allow_zero_layers: bool) -> Result<(), ModelError> {
        if self.layers == 0 && !allow_zero_layers {
            return Err(ModelError::NonPositive("layers"));
        }
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("vocab_size", self.vocab_size),
            ("context_len", self.context_len),
            ("ffn_mult", self.ffn_mult),
        ] {
            if v == 0 {
                return Err(ModelError::NonPositive(name));
            }
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(ModelError::HeadsDoNotDivide {
                hidden_dim: self.hidden_dim,
                heads: self.heads,
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_mult * self.hidden_dim
    }

    /// Parameter count from the closed form (ffn_mult = 4 gives
    /// `VH + TH + L(12H² + 13H) + 2H`).
    pub fn param_count(&self) -> u64 {
        let (v, t, l, h, f) = (
            self.vocab_size as u64,
            self.context_len as u64,
            self.layers as u64,
            self.hidden_dim as u64,
            self.ffn_dim() as u64,
        );
        let per_layer = 2 * h + 4 * (h * h + h) + 2 * h + (h * f + f) + (f * h + h);
        v * h + t * h + l * per_layer + 2 * h
    }

    /// Shapes of every stored tensor, in declaration order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (h, f) = (self.hidden_dim, self.ffn_dim());
        let mut shapes = vec![
            ("token_emb".to_string(), vec![self.vocab_size, h]),
            ("pos_emb".to_string(), vec![self.context_len, h]),
        ];
        for l in 0..self.layers {
            for (name, shape) in [
                ("ln1_gain", vec![h]),
                ("ln1_bias", vec![h]),
                ("w_q", vec![h, h]),
                ("b_q", vec![h]),
                ("w_k", vec![h, h]),
                ("b_k", vec![h]),
                ("w_v", vec![h, h]),
                ("b_v", vec![h]),
                ("w_o", vec![h, h]),
                ("b_o", vec![h]),
                ("ln2_gain", vec![h]),
                ("ln2_bias", vec![h]),
                ("w_ff1", vec![h, f]),
                ("b_ff1", vec![f]),
                ("w_ff2", vec![f, h]),
                ("b_ff2", vec![h]),
            ] {
                shapes.push((format!("layers.{l}.{name}"), shape));
            }
        }
        shapes.push(("lnf_gain".to_string(), vec![h]));
        shapes.push(("lnf_bias".to_string(), vec![h]));
        shapes
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, ModelError> {
        if data.len() != rows * cols {
            return Err(ModelError::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self, ModelError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ModelError::DimensionMismatch("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<S> {
    pub ln1_gain: Vec<S>,
    pub ln1_bias: Vec<S>,
    pub w_q: Vec<S>,
    pub b_q: Vec<S>,
    pub w_k: Vec<S>,
    pub b_k: Vec<S>,
    pub w_v: Vec<S>,
    pub b_v: Vec<S>,
    pub w_o: Vec<S>,
    pub b_o: Vec<S>,
    pub ln2_gain: Vec<S>,
    pub ln2_bias: Vec<S>,
    pub w_ff1: Vec<S>,
    pub b_ff1: Vec<S>,
    pub w_ff2: Vec<S>,
    pub b_ff2: Vec<S>,
}

impl<S> LayerWeights<S> {
    fn tensors(&self) -> [&Vec<S>; 16] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w_q,
            &self.b_q,
            &self.w_k,
            &self.b_k,
            &self.w_v,
            &self.b_v,
            &self.w_o,
            &self.b_o,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w_ff1,
            &self.b_ff1,
            &self.w_ff2,
            &self.b_ff2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<S>; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w_q,
            &mut self.b_q,
            &mut self.w_k,
            &mut self.b_k,
            &mut self.w_v,
            &mut self.b_v,
            &mut self.w_o,
            &mut self.b_o,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w_ff1,
            &mut self.b_ff1,
            &mut self.w_ff2,
            &mut self.b_ff2,
        ]
    }
}

/// All trainable tensors. Also used to hold gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<S> {
    pub token_emb: Vec<S>,
    pub pos_emb: Vec<S>,
    pub layers: Vec<LayerWeights<S>>,
    pub lnf_gain: Vec<S>,
    pub lnf_bias: Vec<S>,
}

impl<S: Scalar> Weights<S> {
    /// Zero-filled tensors with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let shapes = config.tensor_shapes();
        let mut tensors = shapes
            .into_iter()
            .map(|(_, s)| vec![S::zero(); s.iter().product()]);
        Self::from_tensor_iter(config, &mut tensors)
    }

    fn from_tensor_iter(config: &ModelConfig, it: &mut impl Iterator<Item = Vec<S>>) -> Self {
        let mut next = || it.next().expect("tensor count matches config");
        let token_emb = next();
        let pos_emb = next();
        let layers = (0..config.layers)
            .map(|_| LayerWeights {
                ln1_gain: next(),
                ln1_bias: next(),
                w_q: next(),
                b_q: next(),
                w_k: next(),
                b_k: next(),
                w_v: next(),
                b_v: next(),
                w_o: next(),
                b_o: next(),
                ln2_gain: next(),
                ln2_bias: next(),
                w_ff1: next(),
                b_ff1: next(),
                w_ff2: next(),
                b_ff2: next(),
            })
            .collect();
        let lnf_gain = next();
        let lnf_bias = next();
        Weights {
            token_emb,
            pos_emb,
            layers,
            lnf_gain,
            lnf_bias,
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    pub fn cast<T: Scalar>(&self) -> Weights<T> {
        let map = |v: &Vec<S>| v.iter().map(|x| T::of(x.to_f64_lossy())).collect::<Vec<T>>();
        Weights {
            token_emb: map(&self.token_emb),
            pos_emb: map(&self.pos_emb),
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let t = l.tensors();
                    LayerWeights {
                        ln1_gain: map(t[0]),
                        ln1_bias: map(t[1]),
                        w_q: map(t[2]),
                        b_q: map(t[3]),
                        w_k: map(t[4]),
                        b_k: map(t[5]),
                        w_v: map(t[6]),
                        b_v: map(t[7]),
                        w_o: map(t[8]),
                        b_o: map(t[9]),
                        ln2_gain: map(t[10]),
                        ln2_bias: map(t[11]),
                        w_ff1: map(t[12]),
                        b_ff1: map(t[13]),
                        w_ff2: map(t[14]),
                        b_ff2: map(t[15]),
                    }
                })
                .collect(),
            lnf_gain: map(&self.lnf_gain),
            lnf_bias: map(&self.lnf_bias),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Ordered view over a set of parameter tensors.
pub trait ParamSet<S> {
    fn tensors(&self) -> Vec<&[S]>;
    fn tensors_mut(&mut self) -> Vec<&mut [S]>;

    fn num_elements(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

impl<S> ParamSet<S> for Weights<S> {
    fn tensors(&self) -> Vec<&[S]> {
        let mut out: Vec<&[S]> = vec![&self.token_emb, &self.pos_emb];
        for l in &self.layers {
            out.extend(l.tensors().into_iter().map(Vec::as_slice));
        }
        out.push(&self.lnf_gain);
        out.push(&self.lnf_bias);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = vec![&mut self.token_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend(l.tensors_mut().into_iter().map(Vec::as_mut_slice));
        }
        out.push(&mut self.lnf_gain);
        out.push(&mut self.lnf_bias);
        out
    }
}

impl<S> ParamSet<S> for Vec<S> {
    fn tensors(&self) -> Vec<&[S]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        vec![self.as_mut_slice()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel<S> {
    pub config: ModelConfig,
    pub weights: Weights<S>,
}

impl<S: Scalar> TransformerModel<S> {
    /// Weights drawn from N(0, 0.02²) in declaration order; LayerNorm gains
    /// are 1, every bias and LayerNorm offset is 0.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self::init_unchecked(config, seed))
    }

    /// Like [`TransformerModel::init`] but also accepts `layers == 0`: the
    /// embedding/final-norm shell used when analysing per-layer parameter mass.
    pub fn init_shell(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate_inner(true)?;
        Ok(Self::init_unchecked(config, seed))
    }

    fn init_unchecked(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut tensors = config.tensor_shapes().into_iter().map(|(name, shape)| {
            let len: usize = shape.iter().product();
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            if leaf.ends_with("gain") {
                vec![S::one(); len]
            } else if leaf.starts_with("b_") || leaf.ends_with("bias") {
                vec![S::zero(); len]
            } else {
                (0..len).map(|_| S::of(normal.sample(&mut rng))).collect()
            }
        });
        TransformerModel {
            config,
            weights: Weights::from_tensor_iter(&config, &mut tensors),
        }
    }

    pub fn cast<T: Scalar>(&self) -> TransformerModel<T> {
        TransformerModel {
            config: self.config,
            weights: self.weights.cast(),
        }
    }

    /// Total number of stored trainable scalars.
    pub fn count_params(&self) -> u64 {
        self.config.param_count()
    }
}

pub fn init_model<S: Scalar>(config: ModelConfig, seed: u64) -> Result<TransformerModel<S>, ModelError> {
    TransformerModel::init(config, seed)
}

pub fn count_params<S: Scalar>(model: &TransformerModel<S>) -> u64 {
    model.count_params()
}

pub fn forward<S: Scalar>(model: &TransformerModel<S>, tokens: &[usize]) -> Result<Matrix<S>, ModelError> {
    model.forward(tokens)
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}
