//! Forward pass with activation caching and the matching backward pass.

use crate::scalar::{axpy, dot, Scalar};

use super::attention::{heads_backward, heads_forward};
use super::kernels::{gelu, gelu_derivative, layer_norm, layer_norm_backward, linear, linear_backward, NormCache};
use super::{Matrix, ModelError, TransformerModel, Weights};

/// Deliberate backward-pass corruption, used only to show that the gradient
/// checker detects a wrong derivative.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardFault {
    /// Treats GELU as the identity in the backward pass.
    GeluDerivativeIsOne,
}

#[derive(Debug, Clone)]
struct LayerCache<S> {
    ln1: NormCache<S>,
    ln1_out: Vec<S>,
    q: Vec<S>,
    k: Vec<S>,
    v: Vec<S>,
    att: Vec<S>,
    attn_cat: Vec<S>,
    ln2: NormCache<S>,
    ln2_out: Vec<S>,
    ff_pre: Vec<S>,
    ff_act: Vec<S>,
}

/// Activations retained from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    tokens: Vec<usize>,
    layers: Vec<LayerCache<S>>,
    lnf: NormCache<S>,
    lnf_out: Vec<S>,
}

impl<S: Scalar> TransformerModel<S> {
    fn check_tokens(&self, tokens: &[usize]) -> Result<(), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if tokens.len() > self.config.context_len {
            return Err(ModelError::SequenceTooLong {
                len: tokens.len(),
                context: self.config.context_len,
            });
        }
        if let Some(&id) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Next-token logits (`n×V`) for every position.
    pub fn forward(&self, tokens: &[usize]) -> Result<Matrix<S>, ModelError> {
        Ok(self.forward_cached(tokens)?.0)
    }

    /// Logits for the last position only.
    pub fn next_token_logits(&self, tokens: &[usize]) -> Result<Vec<S>, ModelError> {
        let logits = self.forward(tokens)?;
        Ok(logits.row(logits.rows - 1).to_vec())
    }

    pub fn forward_cached(&self, tokens: &[usize]) -> Result<(Matrix<S>, ForwardCache<S>), ModelError> {
        self.check_tokens(tokens)?;
        let cfg = &self.config;
        let w = &self.weights;
        let (n, h, f, v) = (tokens.len(), cfg.hidden_dim, cfg.ffn_dim(), cfg.vocab_size);

        let mut x = vec![S::zero(); n * h];
        for (i, &t) in tokens.iter().enumerate() {
            let row = &mut x[i * h..(i + 1) * h];
            row.copy_from_slice(&w.token_emb[t * h..(t + 1) * h]);
            axpy(row, S::one(), &w.pos_emb[i * h..(i + 1) * h]);
        }

        let mut layers = Vec::with_capacity(cfg.layers);
        let mut tmp = vec![S::zero(); n * h];
        for lw in &w.layers {
            let mut ln1_out = vec![S::zero(); n * h];
            let ln1 = layer_norm(&x, h, &lw.ln1_gain, &lw.ln1_bias, &mut ln1_out);
            let mut q = vec![S::zero(); n * h];
            let mut k = vec![S::zero(); n * h];
            let mut vv = vec![S::zero(); n * h];
            linear(&ln1_out, &lw.w_q, &lw.b_q, h, h, &mut q);
            linear(&ln1_out, &lw.w_k, &lw.b_k, h, h, &mut k);
            linear(&ln1_out, &lw.w_v, &lw.b_v, h, h, &mut vv);
            let mut att = vec![S::zero(); cfg.heads * n * n];
            let mut attn_cat = vec![S::zero(); n * h];
            heads_forward(&q, &k, &vv, n, cfg.head_dim(), cfg.heads, &mut attn_cat, &mut att);
            linear(&attn_cat, &lw.w_o, &lw.b_o, h, h, &mut tmp);
            axpy(&mut x, S::one(), &tmp);

            let mut ln2_out = vec![S::zero(); n * h];
            let ln2 = layer_norm(&x, h, &lw.ln2_gain, &lw.ln2_bias, &mut ln2_out);
            let mut ff_pre = vec![S::zero(); n * f];
            linear(&ln2_out, &lw.w_ff1, &lw.b_ff1, h, f, &mut ff_pre);
            let mut ff_act = vec![S::zero(); n * f];
            gelu(&ff_pre, &mut ff_act);
            linear(&ff_act, &lw.w_ff2, &lw.b_ff2, f, h, &mut tmp);
            axpy(&mut x, S::one(), &tmp);

            layers.push(LayerCache {
                ln1,
                ln1_out,
                q,
                k,
                v: vv,
                att,
                attn_cat,
                ln2,
                ln2_out,
                ff_pre,
                ff_act,
            });
        }

        let mut lnf_out = vec![S::zero(); n * h];
        let lnf = layer_norm(&x, h, &w.lnf_gain, &w.lnf_bias, &mut lnf_out);
        let mut logits = Matrix::zeros(n, v);
        for i in 0..n {
            let xi = &lnf_out[i * h..(i + 1) * h];
            let out = &mut logits.data[i * v..(i + 1) * v];
            for (t, o) in out.iter_mut().enumerate() {
                *o = dot(xi, &w.token_emb[t * h..(t + 1) * h]);
            }
        }
        Ok((
            logits,
            ForwardCache {
                tokens: tokens.to_vec(),
                layers,
                lnf,
                lnf_out,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` given `dlogits` (`n×V`).
    pub fn backward(&self, cache: &ForwardCache<S>, dlogits: &[S], grads: &mut Weights<S>) {
        self.backward_with_fault(cache, dlogits, grads, None)
    }

    #[doc(hidden)]
    pub fn backward_with_fault(
        &self,
        cache: &ForwardCache<S>,
        dlogits: &[S],
        grads: &mut Weights<S>,
        fault: Option<BackwardFault>,
    ) {
        let cfg = &self.config;
        let w = &self.weights;
        let (n, h, f, v) = (cache.tokens.len(), cfg.hidden_dim, cfg.ffn_dim(), cfg.vocab_size);

        // Tied output head.
        let mut dlnf_out = vec![S::zero(); n * h];
        for i in 0..n {
            let dl = &dlogits[i * v..(i + 1) * v];
            let xi = &cache.lnf_out[i * h..(i + 1) * h];
            let di = &mut dlnf_out[i * h..(i + 1) * h];
            for (t, &g) in dl.iter().enumerate() {
                if g != S::zero() {
                    axpy(di, g, &w.token_emb[t * h..(t + 1) * h]);
                    axpy(&mut grads.token_emb[t * h..(t + 1) * h], g, xi);
                }
            }
        }
        let mut dx = vec![S::zero(); n * h];
        layer_norm_backward(
            &dlnf_out,
            &cache.lnf,
            &w.lnf_gain,
            h,
            &mut dx,
            &mut grads.lnf_gain,
            &mut grads.lnf_bias,
        );

        for (l, (lw, lc)) in w.layers.iter().zip(&cache.layers).enumerate().rev() {
            let gl = &mut grads.layers[l];

            // Feed-forward sublayer.
            let mut d_act = vec![S::zero(); n * f];
            linear_backward(&dx, &lc.ff_act, &lw.w_ff2, f, h, &mut d_act, &mut gl.w_ff2, &mut gl.b_ff2);
            for (d, &pre) in d_act.iter_mut().zip(&lc.ff_pre) {
                let g = match fault {
                    Some(BackwardFault::GeluDerivativeIsOne) => S::one(),
                    None => gelu_derivative(pre),
                };
                *d *= g;
            }
            let mut d_ln2 = vec![S::zero(); n * h];
            linear_backward(&d_act, &lc.ln2_out, &lw.w_ff1, h, f, &mut d_ln2, &mut gl.w_ff1, &mut gl.b_ff1);
            layer_norm_backward(&d_ln2, &lc.ln2, &lw.ln2_gain, h, &mut dx, &mut gl.ln2_gain, &mut gl.ln2_bias);

            // Attention sublayer.
            let mut d_cat = vec![S::zero(); n * h];
            linear_backward(&dx, &lc.attn_cat, &lw.w_o, h, h, &mut d_cat, &mut gl.w_o, &mut gl.b_o);
            let mut dq = vec![S::zero(); n * h];
            let mut dk = vec![S::zero(); n * h];
            let mut dv = vec![S::zero(); n * h];
            heads_backward(
                &d_cat,
                &lc.q,
                &lc.k,
                &lc.v,
                &lc.att,
                n,
                cfg.head_dim(),
                cfg.heads,
                &mut dq,
                &mut dk,
                &mut dv,
            );
            let mut d_ln1 = vec![S::zero(); n * h];
            linear_backward(&dq, &lc.ln1_out, &lw.w_q, h, h, &mut d_ln1, &mut gl.w_q, &mut gl.b_q);
            linear_backward(&dk, &lc.ln1_out, &lw.w_k, h, h, &mut d_ln1, &mut gl.w_k, &mut gl.b_k);
            linear_backward(&dv, &lc.ln1_out, &lw.w_v, h, h, &mut d_ln1, &mut gl.w_v, &mut gl.b_v);
            layer_norm_backward(&d_ln1, &lc.ln1, &lw.ln1_gain, h, &mut dx, &mut gl.ln1_gain, &mut gl.ln1_bias);
        }

        for (i, &t) in cache.tokens.iter().enumerate() {
            let d = &dx[i * h..(i + 1) * h];
            axpy(&mut grads.token_emb[t * h..(t + 1) * h], S::one(), d);
            axpy(&mut grads.pos_emb[i * h..(i + 1) * h], S::one(), d);
        }
    }
}
