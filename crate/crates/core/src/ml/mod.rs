//! Baseline learners and metrics used by the utility and similarity
//! evaluations. Everything here is 64-bit and deterministic per seed.

mod forest;
mod linear;
mod metrics;

pub use forest::{fit_forest, DecisionTree, Forest, ForestConfig, Resampling, Split};
pub use linear::{fit_linear, fit_logistic, LinearModel, LogisticModel, LOGISTIC_ITERS, LOGISTIC_L2, LOGISTIC_STEP};
pub use metrics::{accuracy, macro_f1, r_squared};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlError {
    #[error("dataset has no rows")]
    Empty,
    #[error("row {row} has {found} features, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("{0} labels for {1} rows")]
    LabelCount(usize, usize),
    #[error("non-finite value at row {0}")]
    NonFinite(usize),
    #[error("label {0} is not a class index")]
    BadLabel(f64),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("prediction and truth lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("label {label} outside 0..{n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("truth is constant; R² is undefined")]
    ConstantTruth,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("Gram matrix is singular even after ridge")]
    DegenerateGram,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Feature matrix (one `Vec` per row) and labels. Class labels are stored
/// as integral reals counting from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset2D {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    dim: usize,
}

impl Dataset2D {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self, MlError> {
        if features.is_empty() {
            return Err(MlError::Empty);
        }
        if features.len() != labels.len() {
            return Err(MlError::LabelCount(labels.len(), features.len()));
        }
        let dim = features[0].len();
        for (i, row) in features.iter().enumerate() {
            if row.len() != dim {
                return Err(MlError::Ragged {
                    row: i,
                    found: row.len(),
                    expected: dim,
                });
            }
            if !row.iter().all(|v| v.is_finite()) || !labels[i].is_finite() {
                return Err(MlError::NonFinite(i));
            }
        }
        Ok(Dataset2D { features, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Labels as class indices, with the class count `max + 1`.
    pub fn class_labels(&self) -> Result<(Vec<usize>, usize), MlError> {
        let mut out = Vec::with_capacity(self.labels.len());
        for &l in &self.labels {
            if l < 0.0 || l.fract() != 0.0 || l > u32::MAX as f64 {
                return Err(MlError::BadLabel(l));
            }
            out.push(l as usize);
        }
        let k = out.iter().max().map_or(0, |m| m + 1);
        Ok((out, k))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset2D {
        Dataset2D {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
        }
    }
}
