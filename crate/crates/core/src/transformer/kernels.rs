//! Dense building blocks shared by forward and backward passes. Every matrix
//! is row-major; `n` is the number of sequence positions.

use crate::scalar::{axpy, dot, Scalar};

use super::LAYER_NORM_EPS;

/// Per-row cache kept by [`layer_norm`] for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache<S> {
    pub xhat: Vec<S>,
    pub rstd: Vec<S>,
}

pub fn layer_norm<S: Scalar>(x: &[S], width: usize, gain: &[S], bias: &[S], out: &mut [S]) -> NormCache<S> {
    let n = x.len() / width;
    let eps = S::of(LAYER_NORM_EPS);
    let inv_w = S::one() / S::of(width as f64);
    let mut xhat = vec![S::zero(); x.len()];
    let mut rstd = vec![S::zero(); n];
    for i in 0..n {
        let row = &x[i * width..(i + 1) * width];
        let mean = row.iter().copied().sum::<S>() * inv_w;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() * inv_w;
        let r = S::one() / (var + eps).sqrt();
        rstd[i] = r;
        for j in 0..width {
            let xh = (row[j] - mean) * r;
            xhat[i * width + j] = xh;
            out[i * width + j] = xh * gain[j] + bias[j];
        }
    }
    NormCache { xhat, rstd }
}

/// Accumulates `dx`, `dgain`, `dbias` from `dout`.
pub fn layer_norm_backward<S: Scalar>(
    dout: &[S],
    cache: &NormCache<S>,
    gain: &[S],
    width: usize,
    dx: &mut [S],
    dgain: &mut [S],
    dbias: &mut [S],
) {
    let inv_w = S::one() / S::of(width as f64);
    let mut dxhat = vec![S::zero(); width];
    for (i, &r) in cache.rstd.iter().enumerate() {
        let base = i * width;
        let xh = &cache.xhat[base..base + width];
        let d = &dout[base..base + width];
        for j in 0..width {
            dxhat[j] = d[j] * gain[j];
            dgain[j] += d[j] * xh[j];
            dbias[j] += d[j];
        }
        let mean1 = dxhat.iter().copied().sum::<S>() * inv_w;
        let mean2 = dot(&dxhat, xh) * inv_w;
        for j in 0..width {
            dx[base + j] += r * (dxhat[j] - mean1 - xh[j] * mean2);
        }
    }
}

/// `out = x · w + b` with `x: n×k`, `w: k×m`, `out: n×m`.
pub fn linear<S: Scalar>(x: &[S], w: &[S], b: &[S], k: usize, m: usize, out: &mut [S]) {
    let n = x.len() / k;
    for i in 0..n {
        let o = &mut out[i * m..(i + 1) * m];
        o.copy_from_slice(b);
        for (kk, &a) in x[i * k..(i + 1) * k].iter().enumerate() {
            axpy(o, a, &w[kk * m..(kk + 1) * m]);
        }
    }
}

/// Accumulates gradients of [`linear`]: `dx += dout · wᵀ`, `dw += xᵀ · dout`, `db += Σ dout`.
pub fn linear_backward<S: Scalar>(
    dout: &[S],
    x: &[S],
    w: &[S],
    k: usize,
    m: usize,
    dx: &mut [S],
    dw: &mut [S],
    db: &mut [S],
) {
    let n = x.len() / k;
    for i in 0..n {
        let d = &dout[i * m..(i + 1) * m];
        for (o, &v) in db.iter_mut().zip(d) {
            *o += v;
        }
        let xi = &x[i * k..(i + 1) * k];
        let dxi = &mut dx[i * k..(i + 1) * k];
        for kk in 0..k {
            let wrow = &w[kk * m..(kk + 1) * m];
            dxi[kk] += dot(d, wrow);
            axpy(&mut dw[kk * m..(kk + 1) * m], xi[kk], d);
        }
    }
}

const GELU_C: f64 = 0.044_715;

#[inline]
fn sqrt_2_over_pi<S: Scalar>() -> S {
    S::of((2.0 / std::f64::consts::PI).sqrt())
}

/// Tanh approximation of GELU.
pub fn gelu<S: Scalar>(x: &[S], out: &mut [S]) {
    let c = S::of(GELU_C);
    let k = sqrt_2_over_pi::<S>();
    let half = S::of(0.5);
    for (o, &v) in out.iter_mut().zip(x) {
        let t = (k * (v + c * v * v * v)).tanh();
        *o = half * v * (S::one() + t);
    }
}

pub fn gelu_derivative<S: Scalar>(v: S) -> S {
    let c = S::of(GELU_C);
    let k = sqrt_2_over_pi::<S>();
    let half = S::of(0.5);
    let t = (k * (v + c * v * v * v)).tanh();
    half * (S::one() + t) + half * v * (S::one() - t * t) * k * (S::one() + S::of(3.0) * c * v * v)
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0f64, -1.0, -0.1, 0.0, 0.3, 1.7, 4.0] {
            let h = 1e-6;
            let mut a = [0.0];
            let mut b = [0.0];
            gelu(&[x + h], &mut a);
            gelu(&[x - h], &mut b);
            let numeric = (a[0] - b[0]) / (2.0 * h);
            assert!((numeric - gelu_derivative(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let x = [1.0f64, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 2.0];
        let mut out = [0.0; 8];
        layer_norm(&x, 4, &[1.0; 4], &[0.0; 4], &mut out);
        for row in out.chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn linear_matches_hand_product() {
        // x = [[1, 2]], w = [[1, 0, 2], [3, 1, 0]], b = [0.5, 0, -1]
        let mut out = [0.0f64; 3];
        linear(&[1.0, 2.0], &[1.0, 0.0, 2.0, 3.0, 1.0, 0.0], &[0.5, 0.0, -1.0], 2, 3, &mut out);
        assert_eq!(out, [7.5, 2.0, 1.0]);
    }
}
