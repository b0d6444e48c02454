use super::{Dataset2D, MlError};

pub const LOGISTIC_L2: f64 = 1e-4;
pub const LOGISTIC_ITERS: usize = 500;
/// Full-batch gradient-descent step on standardized features.
pub const LOGISTIC_STEP: f64 = 0.5;

/// Multinomial logistic regression over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// `n_classes` rows of `dim + 1` values; the last entry is the bias.
    pub weights: Vec<Vec<f64>>,
}

impl LogisticModel {
    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    fn scores(&self, x: &[f64], z: &mut Vec<f64>, out: &mut Vec<f64>) {
        z.clear();
        z.extend(x.iter().zip(&self.means).zip(&self.scales).map(|((v, m), s)| (v - m) / s));
        out.clear();
        for w in &self.weights {
            let d = z.len();
            out.push(w[..d].iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>() + w[d]);
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut z = Vec::new();
        let mut s = Vec::new();
        self.scores(x, &mut z, &mut s);
        softmax(&mut s);
        s
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.predict_proba(x))
    }

    pub fn predict_all(&self, rows: &[Vec<f64>]) -> Vec<usize> {
        rows.iter().map(|r| self.predict(r)).collect()
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

fn standardize(data: &Dataset2D) -> (Vec<f64>, Vec<f64>) {
    let n = data.len() as f64;
    let d = data.dim();
    let mut means = vec![0.0; d];
    for row in data.features() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut scales = vec![0.0; d];
    for row in data.features() {
        for ((s, v), m) in scales.iter_mut().zip(row).zip(&means) {
            *s += (v - m).powi(2);
        }
    }
    for s in scales.iter_mut() {
        *s = (*s / n).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    (means, scales)
}

/// Gradient descent on mean cross-entropy plus `l2/2 · |W|²` (biases are
/// not penalized), starting from zero weights.
pub fn fit_logistic(train: &Dataset2D, l2: f64, iters: usize) -> Result<LogisticModel, MlError> {
    let (labels, k) = train.class_labels()?;
    let mut present = vec![false; k];
    labels.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(MlError::SingleClass);
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(MlError::InvalidConfig("l2 must be finite and non-negative".into()));
    }
    let d = train.dim();
    let n = train.len() as f64;
    let (means, scales) = standardize(train);
    let mut model = LogisticModel {
        means,
        scales,
        weights: vec![vec![0.0; d + 1]; k],
    };
    let mut grad = vec![vec![0.0; d + 1]; k];
    let mut z = Vec::with_capacity(d);
    let mut p = Vec::with_capacity(k);
    for _ in 0..iters {
        grad.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
        for (x, &y) in train.features().iter().zip(&labels) {
            model.scores(x, &mut z, &mut p);
            softmax(&mut p);
            for (c, g) in grad.iter_mut().enumerate() {
                let err = p[c] - if c == y { 1.0 } else { 0.0 };
                for (gj, zj) in g[..d].iter_mut().zip(&z) {
                    *gj += err * zj;
                }
                g[d] += err;
            }
        }
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            for j in 0..=d {
                let reg = if j < d { l2 * w[j] } else { 0.0 };
                w[j] -= LOGISTIC_STEP * (g[j] / n + reg);
            }
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.intercept
    }

    pub fn predict_all(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict(r)).collect()
    }
}

/// Ridge regression with an unpenalized intercept, solved from the normal
/// equations by Gaussian elimination with partial pivoting.
pub fn fit_linear(train: &Dataset2D, l2: f64) -> Result<LinearModel, MlError> {
    let d = train.dim();
    if train.len() < d {
        return Err(MlError::TooFewRows {
            needed: d,
            got: train.len(),
        });
    }
    let m = d + 1;
    let mut a = vec![vec![0.0; m + 1]; m];
    let mut aug = vec![0.0; m];
    for (x, &y) in train.features().iter().zip(train.labels()) {
        aug[..d].copy_from_slice(x);
        aug[d] = 1.0;
        for i in 0..m {
            for j in 0..m {
                a[i][j] += aug[i] * aug[j];
            }
            a[i][m] += aug[i] * y;
        }
    }
    for (i, row) in a.iter_mut().enumerate().take(d) {
        row[i] += l2;
    }
    let solution = solve(a)?;
    Ok(LinearModel {
        coefficients: solution[..d].to_vec(),
        intercept: solution[d],
    })
}

/// Solves an augmented `m × (m+1)` system in place.
fn solve(mut a: Vec<Vec<f64>>) -> Result<Vec<f64>, MlError> {
    let m = a.len();
    let scale = a
        .iter()
        .flat_map(|r| r[..m].iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = scale.max(1.0) * 1e-12;
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() <= tol {
            return Err(MlError::DegenerateGram);
        }
        a.swap(col, pivot);
        for r in col + 1..m {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..=m {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let tail: f64 = (r + 1..m).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][m] - tail) / a[r][r];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n_per: usize, seed: u64) -> Dataset2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (label, centre) in [(0.0, -2.0), (1.0, 2.0)] {
            for _ in 0..n_per {
                x.push(vec![centre + noise.sample(&mut rng), centre + noise.sample(&mut rng)]);
                y.push(label);
            }
        }
        Dataset2D::new(x, y).unwrap()
    }

    #[test]
    fn separable_blobs_fit() {
        let data = blobs(20, 3);
        let model = fit_logistic(&data, LOGISTIC_L2, LOGISTIC_ITERS).unwrap();
        let (truth, _) = data.class_labels().unwrap();
        let acc = crate::ml::accuracy(&model.predict_all(data.features()), &truth).unwrap();
        assert!(acc >= 0.95, "{acc}");
    }

    #[test]
    fn duplication_leaves_weights_unchanged() {
        let data = blobs(20, 4);
        let idx: Vec<usize> = (0..data.len()).chain(0..data.len()).collect();
        let doubled = data.subset(&idx);
        let a = fit_logistic(&data, LOGISTIC_L2, LOGISTIC_ITERS).unwrap();
        let b = fit_logistic(&doubled, LOGISTIC_L2, LOGISTIC_ITERS).unwrap();
        for (ra, rb) in a.weights.iter().zip(&b.weights) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_class_rejected() {
        let d = Dataset2D::new(vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).unwrap();
        assert_eq!(fit_logistic(&d, LOGISTIC_L2, 10), Err(MlError::SingleClass));
    }

    #[test]
    fn three_classes() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 3) as f64 * 3.0 + (i as f64) * 0.01]).collect();
        let y: Vec<f64> = (0..30).map(|i| (i % 3) as f64).collect();
        let d = Dataset2D::new(x, y).unwrap();
        let m = fit_logistic(&d, LOGISTIC_L2, 2000).unwrap();
        assert_eq!(m.n_classes(), 3);
        let (truth, _) = d.class_labels().unwrap();
        assert!(crate::ml::accuracy(&m.predict_all(d.features()), &truth).unwrap() >= 0.9);
    }

    #[test]
    fn exact_line() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 + 1.0).collect();
        let m = fit_linear(&Dataset2D::new(x, y).unwrap(), 1e-8).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-6);
        assert!((m.intercept - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_target() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let m = fit_linear(&Dataset2D::new(x, vec![4.5; 10]).unwrap(), 1e-8).unwrap();
        assert!(m.coefficients[0].abs() < 1e-9);
        assert!((m.intercept - 4.5).abs() < 1e-9);
    }

    #[test]
    fn degenerate_gram_reported() {
        // identical columns and no ridge
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..6).map(|i| i as f64).collect();
        assert_eq!(
            fit_linear(&Dataset2D::new(x, y).unwrap(), 0.0),
            Err(MlError::DegenerateGram)
        );
    }

    #[test]
    fn matches_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let n = 50;
            let x: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let y: Vec<f64> = x
                .iter()
                .map(|r| 0.5 * r[0] - 1.5 * r[1] + 2.0 * r[2] + 0.3 + rng.random_range(-0.1..0.1))
                .collect();
            let design = DMatrix::from_fn(n, 4, |i, j| if j < 3 { x[i][j] } else { 1.0 });
            let pinv = design.clone().pseudo_inverse(1e-14).unwrap();
            let oracle = pinv * DVector::from_vec(y.clone());
            let m = fit_linear(&Dataset2D::new(x, y).unwrap(), 1e-8).unwrap();
            for j in 0..3 {
                assert!((m.coefficients[j] - oracle[j]).abs() < 1e-6);
            }
            assert!((m.intercept - oracle[3]).abs() < 1e-6);
        }
    }
}
