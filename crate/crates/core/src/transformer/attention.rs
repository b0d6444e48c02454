//! Causal scaled dot-product attention.

use crate::scalar::{axpy, dot, Scalar};

use super::kernels::softmax_in_place;
use super::{Matrix, ModelError};

/// Output rows plus the post-softmax weight matrix (lower-triangular).
#[derive(Debug, Clone)]
pub struct AttentionOutput<S> {
    pub output: Matrix<S>,
    pub weights: Matrix<S>,
}

/// `softmax(QKᵀ/√d + mask)·V` for a single head, where the mask removes
/// every key position after the query position.
pub fn causal_attention<S: Scalar>(
    q: &Matrix<S>,
    k: &Matrix<S>,
    v: &Matrix<S>,
) -> Result<AttentionOutput<S>, ModelError> {
    let n = q.rows;
    let d = q.cols;
    if k.rows != n || v.rows != n || k.cols != d || v.cols != d {
        return Err(ModelError::DimensionMismatch(format!(
            "q {}x{}, k {}x{}, v {}x{}",
            q.rows, q.cols, k.rows, k.cols, v.rows, v.cols
        )));
    }
    let mut output = Matrix::zeros(n, d);
    let mut weights = Matrix::zeros(n, n);
    heads_forward(&q.data, &k.data, &v.data, n, d, 1, &mut output.data, &mut weights.data);
    Ok(AttentionOutput { output, weights })
}

/// Multi-head forward over packed `n×(heads·d)` projections. `att` receives
/// `heads` stacked `n×n` weight matrices.
#[allow(clippy::too_many_arguments)]
pub(crate) fn heads_forward<S: Scalar>(
    q: &[S],
    k: &[S],
    v: &[S],
    n: usize,
    head_dim: usize,
    heads: usize,
    out: &mut [S],
    att: &mut [S],
) {
    let width = head_dim * heads;
    let scale = S::one() / S::of(head_dim as f64).sqrt();
    for h in 0..heads {
        let off = h * head_dim;
        for i in 0..n {
            let qi = &q[i * width + off..i * width + off + head_dim];
            let row = &mut att[(h * n + i) * n..(h * n + i) * n + n];
            for j in 0..=i {
                row[j] = dot(qi, &k[j * width + off..j * width + off + head_dim]) * scale;
            }
            softmax_in_place(&mut row[..=i]);
            for r in row[i + 1..].iter_mut() {
                *r = S::zero();
            }
            let oi = &mut out[i * width + off..i * width + off + head_dim];
            oi.iter_mut().for_each(|x| *x = S::zero());
            for j in 0..=i {
                axpy(oi, row[j], &v[j * width + off..j * width + off + head_dim]);
            }
        }
    }
}

/// Accumulates `dq`, `dk`, `dv` given the output gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn heads_backward<S: Scalar>(
    dout: &[S],
    q: &[S],
    k: &[S],
    v: &[S],
    att: &[S],
    n: usize,
    head_dim: usize,
    heads: usize,
    dq: &mut [S],
    dk: &mut [S],
    dv: &mut [S],
) {
    let width = head_dim * heads;
    let scale = S::one() / S::of(head_dim as f64).sqrt();
    let mut datt = vec![S::zero(); n];
    for h in 0..heads {
        let off = h * head_dim;
        for i in 0..n {
            let row = &att[(h * n + i) * n..(h * n + i) * n + n];
            let di = &dout[i * width + off..i * width + off + head_dim];
            let mut weighted = S::zero();
            for j in 0..=i {
                let vj = j * width + off;
                datt[j] = dot(di, &v[vj..vj + head_dim]);
                weighted += row[j] * datt[j];
                axpy(&mut dv[vj..vj + head_dim], row[j], di);
            }
            let qi = i * width + off;
            for j in 0..=i {
                let ds = row[j] * (datt[j] - weighted) * scale;
                let kj = j * width + off;
                axpy(&mut dq[qi..qi + head_dim], ds, &k[kj..kj + head_dim]);
                axpy(&mut dk[kj..kj + head_dim], ds, &q[qi..qi + head_dim]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn single_position_returns_value() {
        let out = causal_attention(&m(&[vec![0.3, -1.0]]), &m(&[vec![2.0, 1.0]]), &m(&[vec![5.0, 7.0]])).unwrap();
        assert_eq!(out.output.data, vec![5.0, 7.0]);
        assert_eq!(out.weights.data, vec![1.0]);
    }

    #[test]
    fn two_positions_by_hand() {
        // q0 = (1, 0), q1 = (0, 1); k0 = (1, 0), k1 = (0, 1); d = 2.
        // Row 1 scores: q1·k0/√2 = 0, q1·k1/√2 = 1/√2.
        let q = m(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let k = m(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let v = m(&[vec![1.0, 2.0], vec![3.0, -1.0]]);
        let out = causal_attention(&q, &k, &v).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let w1 = s.exp() / (1.0 + s.exp());
        let w0 = 1.0 - w1;
        assert_eq!(out.output.row(0), &[1.0, 2.0]);
        let expected = [w0 * 1.0 + w1 * 3.0, w0 * 2.0 + w1 * -1.0];
        for (a, b) in out.output.row(1).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((out.weights.get(1, 0) - w0).abs() < 1e-12);
        assert_eq!(out.weights.get(0, 1), 0.0);
    }

    #[test]
    fn weights_are_causal_probability_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rand_m = |r: usize, c: usize| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0f32)).collect()).unwrap()
        };
        let (q, k, v) = (rand_m(8, 4), rand_m(8, 4), rand_m(8, 4));
        let out = causal_attention(&q, &k, &v).unwrap();
        for i in 0..8 {
            let sum: f32 = out.weights.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            for j in i + 1..8 {
                assert_eq!(out.weights.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = Matrix::<f32>::zeros(2, 3);
        let b = Matrix::<f32>::zeros(3, 3);
        assert!(causal_attention(&a, &b, &a).is_err());
    }
}
