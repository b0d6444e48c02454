use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::transformer::{BackwardFault, ParamSet, TransformerModel, Weights};

use super::{loss_and_grad_with_fault, Example, TrainError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Number of weights compared (sampled without replacement).
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-3,
            samples: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
}

/// Maximum relative error between backpropagated and central-difference
/// gradients over 200 sampled weights, computed in 64-bit.
pub fn grad_check<S: Scalar>(model: &TransformerModel<S>, batch: &[Example], epsilon: f64) -> Result<f64, TrainError> {
    let config = GradCheckConfig {
        epsilon,
        ..GradCheckConfig::default()
    };
    Ok(grad_check_with(model, batch, &config, None)?.max_relative_error)
}

pub fn grad_check_with<S: Scalar>(
    model: &TransformerModel<S>,
    batch: &[Example],
    config: &GradCheckConfig,
    fault: Option<BackwardFault>,
) -> Result<GradCheckReport, TrainError> {
    let mut model: TransformerModel<f64> = model.cast();
    let mut grads = Weights::zeros(&model.config);
    loss_and_grad_with_fault(&model, batch, &mut grads, fault)?;
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();

    let total = analytic.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let picks = rand::seq::index::sample(&mut rng, total, config.samples.min(total)).into_vec();
    let mut scratch = Weights::zeros(&model.config);
    let mut max_rel: f64 = 0.0;
    for &flat in &picks {
        let plus = perturbed_loss(&mut model, batch, flat, config.epsilon, &mut scratch)?;
        let minus = perturbed_loss(&mut model, batch, flat, -config.epsilon, &mut scratch)?;
        let numeric = (plus - minus) / (2.0 * config.epsilon);
        let a = analytic[flat];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport {
        max_relative_error: max_rel,
        checked: picks.len(),
    })
}

fn perturbed_loss(
    model: &mut TransformerModel<f64>,
    batch: &[Example],
    flat: usize,
    delta: f64,
    scratch: &mut Weights<f64>,
) -> Result<f64, TrainError> {
    let slot = locate(&mut model.weights, flat);
    let original = *slot;
    *slot = original + delta;
    let loss = batch_loss(model, batch, scratch);
    *locate(&mut model.weights, flat) = original;
    loss
}

fn batch_loss(model: &TransformerModel<f64>, batch: &[Example], _scratch: &mut Weights<f64>) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut count = 0;
    for ex in batch {
        let logits = model.forward(&ex.inputs)?;
        let n = ex.target_count();
        if n > 0 {
            total += super::cross_entropy(&logits, &ex.targets)? * n as f64;
            count += n;
        }
    }
    Ok(total / count as f64)
}

fn locate(weights: &mut Weights<f64>, mut flat: usize) -> &mut f64 {
    for t in weights.tensors_mut() {
        if flat < t.len() {
            return &mut t[flat];
        }
        flat -= t.len();
    }
    panic!("flat index out of range")
}
