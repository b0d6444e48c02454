use crate::scalar::Scalar;
use crate::transformer::ParamSet;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 norm the gradient is clipped to before the update.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub config: AdamConfig,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new<P: ParamSet<S> + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![S::zero(); t.len()]).collect::<Vec<_>>();
        Adam {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Clips `grads` in place, then updates `params`. Returns the pre-clip norm.
    /// A non-finite gradient leaves parameters and state untouched.
    pub fn step<P: ParamSet<S> + ?Sized>(&mut self, params: &mut P, grads: &mut P) -> Result<f64, TrainError> {
        let norm = grads
            .tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| {
                let g = g.to_f64_lossy();
                g * g
            })
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(TrainError::NonFiniteGradient(norm));
        }
        if let Some(max) = self.config.clip_norm {
            if norm > max {
                let scale = S::of(max / norm);
                for t in grads.tensors_mut() {
                    t.iter_mut().for_each(|g| *g *= scale);
                }
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let (one_b1, one_b2) = (S::of(1.0 - c.beta1), S::of(1.0 - c.beta2));
        let bc1 = S::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = S::of(1.0 - c.beta2.powi(self.step as i32));
        let lr = S::of(c.learning_rate);
        let eps = S::of(c.epsilon);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(norm)
    }
}

/// Single Adam update; see [`Adam::step`].
pub fn adam_step<S: Scalar, P: ParamSet<S> + ?Sized>(
    params: &mut P,
    grads: &mut P,
    state: &mut Adam<S>,
) -> Result<f64, TrainError> {
    state.step(params, grads)
}
