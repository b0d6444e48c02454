use super::MlError;

fn check_lengths(a: usize, b: usize) -> Result<(), MlError> {
    if a != b {
        return Err(MlError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MlError::Empty);
    }
    Ok(())
}

/// Fraction of positions where prediction equals truth.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, MlError> {
    check_lengths(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Unweighted mean of per-class F1 over `0..n_classes`. Zero denominators
/// give 0, and classes absent from both sides still count toward the mean.
pub fn macro_f1(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64, MlError> {
    check_lengths(pred.len(), truth.len())?;
    if n_classes == 0 {
        return Err(MlError::InvalidConfig("n_classes must be positive".into()));
    }
    let mut tp = vec![0usize; n_classes];
    let mut pred_count = vec![0usize; n_classes];
    let mut true_count = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        for label in [p, t] {
            if label >= n_classes {
                return Err(MlError::LabelOutOfRange { label, n_classes });
            }
        }
        pred_count[p] += 1;
        true_count[t] += 1;
        if p == t {
            tp[p] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let total: f64 = (0..n_classes)
        .map(|k| {
            let p = ratio(tp[k], pred_count[k]);
            let r = ratio(tp[k], true_count[k]);
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .sum();
    Ok(total / n_classes as f64)
}

/// `1 - SS_res / SS_tot`.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<f64, MlError> {
    check_lengths(pred.len(), truth.len())?;
    if truth.len() < 2 {
        return Err(MlError::TooFewRows {
            needed: 2,
            got: truth.len(),
        });
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MlError::ConstantTruth);
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}
