use crate::scalar::Scalar;
use crate::tokenizer::PAD;
use crate::transformer::{BackwardFault, Matrix, TransformerModel, Weights};

use super::{Example, TrainError};

/// Mean of `−log softmax(logits)[target]` over positions whose target is not PAD.
pub fn cross_entropy<S: Scalar>(logits: &Matrix<S>, targets: &[usize]) -> Result<f64, TrainError> {
    if logits.rows != targets.len() {
        return Err(TrainError::ShapeMismatch {
            rows: logits.rows,
            cols: logits.cols,
            targets: targets.len(),
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, &t) in targets.iter().enumerate() {
        if t == PAD {
            continue;
        }
        total += neg_log_prob(logits.row(i), t);
        count += 1;
    }
    if count == 0 {
        return Err(TrainError::NoTargets);
    }
    Ok(total / count as f64)
}

fn neg_log_prob<S: Scalar>(row: &[S], target: usize) -> f64 {
    let max = row.iter().map(|v| v.to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v.to_f64_lossy() - max).exp()).sum();
    max + sum.ln() - row[target].to_f64_lossy()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    /// Mean loss over the batch's non-PAD targets.
    pub loss: f64,
    pub tokens: usize,
}

/// Batch loss and its gradient, written into `grads` (overwritten).
pub fn loss_and_grad<S: Scalar>(
    model: &TransformerModel<S>,
    batch: &[Example],
    grads: &mut Weights<S>,
) -> Result<BatchLoss, TrainError> {
    loss_and_grad_with_fault(model, batch, grads, None)
}

#[doc(hidden)]
pub fn loss_and_grad_with_fault<S: Scalar>(
    model: &TransformerModel<S>,
    batch: &[Example],
    grads: &mut Weights<S>,
    fault: Option<BackwardFault>,
) -> Result<BatchLoss, TrainError> {
    grads.fill_zero();
    let tokens: usize = batch.iter().map(Example::target_count).sum();
    if tokens == 0 {
        return Err(TrainError::NoTargets);
    }
    let scale = S::one() / S::of(tokens as f64);
    let mut total = 0.0;
    let vocab = model.config.vocab_size;
    for ex in batch {
        let (logits, cache) = model.forward_cached(&ex.inputs)?;
        let mut dlogits = logits.data;
        for (i, &t) in ex.targets.iter().enumerate() {
            let row = &mut dlogits[i * vocab..(i + 1) * vocab];
            if t == PAD {
                row.iter_mut().for_each(|v| *v = S::zero());
                continue;
            }
            total += neg_log_prob(row, t);
            crate::transformer::softmax_rows(row);
            row[t] -= S::one();
            row.iter_mut().for_each(|v| *v *= scale);
        }
        model.backward_with_fault(&cache, &dlogits, grads, fault);
    }
    Ok(BatchLoss {
        loss: total / tokens as f64,
        tokens,
    })
}
