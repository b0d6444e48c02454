//! Transformer-based tabular data synthesis at desk scale.
//!
//! Rows are rendered as `"<column> is <value>"` sentences, tokenized at word
//! level, and fitted with a small decoder-only transformer trained from
//! scratch. Synthetic rows are sampled autoregressively and parsed back.
//! A relational mode pairs a parent-table model with a parent-conditioned
//! child decoder. The benchmark side measures runtime, ML utility and
//! discriminator similarity across depth/width sweeps.

pub mod codec;
pub mod dataset;
pub mod eval;
pub mod fixtures;
pub mod ml;
pub mod relational;
pub mod runner;
pub mod sampler;
pub mod scalar;
pub mod synth;
pub mod tokenizer;
pub mod train;
pub mod transformer;

pub use codec::{ColumnOrder, ParseFailure, ParseFailureReason, RowSentence};
pub use dataset::{Cell, ColumnKind, ColumnSpec, DataTable, Row, TableSchema, Task};
pub use scalar::Scalar;
pub use tokenizer::{TokenId, TokenSequence, Vocab};
pub use train::{TrainConfig, TrainTrace};
pub use transformer::{Matrix, ModelConfig, SizeEstimate, TransformerModel, Weights};

/// Single-precision model used for training and sampling.
pub type Model = TransformerModel<f32>;
/// Double-precision model used by the gradient checker.
pub type Model64 = TransformerModel<f64>;
/// Single-precision logits / activations.
pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;

/// Crate version recorded in run reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
