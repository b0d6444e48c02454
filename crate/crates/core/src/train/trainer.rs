use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tokenizer::TokenSequence;
use crate::transformer::{TransformerModel, Weights};

use super::{loss_and_grad, Adam, AdamConfig, Corpus, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::adam_epsilon")]
    pub adam_epsilon: f64,
    #[serde(default = "defaults::grad_clip_norm")]
    pub grad_clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn epochs() -> usize {
        50
    }
    pub fn batch_size() -> usize {
        16
    }
    pub fn learning_rate() -> f64 {
        3e-4
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn adam_epsilon() -> f64 {
        1e-8
    }
    pub fn grad_clip_norm() -> f64 {
        1.0
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            learning_rate: defaults::learning_rate(),
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            adam_epsilon: defaults::adam_epsilon(),
            grad_clip_norm: defaults::grad_clip_norm(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(TrainError::InvalidConfig("grad_clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
            clip_norm: Some(self.grad_clip_norm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainTrace {
    /// Token-weighted mean loss of each epoch, measured before each step.
    pub epoch_losses: Vec<f64>,
    pub wall_seconds: f64,
    pub tokens_seen: u64,
}

/// Trains on fixed token sequences.
pub fn train<S: Scalar>(
    model: TransformerModel<S>,
    corpus: &[TokenSequence],
    config: &TrainConfig,
) -> Result<(TransformerModel<S>, TrainTrace), TrainError> {
    train_corpus(model, corpus, config)
}

/// Epoch loop: seeded reshuffle, mini-batches, one Adam step per batch.
/// Bitwise deterministic for a given model, corpus and config.
pub fn train_corpus<S: Scalar, C: Corpus + ?Sized>(
    mut model: TransformerModel<S>,
    corpus: &C,
    config: &TrainConfig,
) -> Result<(TransformerModel<S>, TrainTrace), TrainError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if corpus.max_len() > model.config.context_len {
        return Err(TrainError::SequenceOverflow {
            len: corpus.max_len(),
            context: model.config.context_len,
        });
    }
    let start = Instant::now();
    let mut trace = TrainTrace::default();
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut example_rng = ChaCha8Rng::seed_from_u64(config.seed);
    example_rng.set_stream(1);
    let mut adam = Adam::new(&model.weights, config.adam());
    let mut grads = Weights::zeros(&model.config);
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for _ in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let mut weighted = 0.0;
        let mut tokens = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| corpus.example(i, &mut example_rng))
                .collect::<Result<Vec<_>, _>>()?;
            let stats = loss_and_grad(&model, &batch, &mut grads)?;
            adam.step(&mut model.weights, &mut grads)?;
            weighted += stats.loss * stats.tokens as f64;
            tokens += stats.tokens;
        }
        trace.epoch_losses.push(weighted / tokens as f64);
        trace.tokens_seen += tokens as u64;
    }
    trace.wall_seconds = start.elapsed().as_secs_f64();
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::ModelConfig;

    fn corpus() -> Vec<TokenSequence> {
        vec![TokenSequence(vec![1, 4, 5, 6, 2]), TokenSequence(vec![1, 6, 5, 4, 2])]
    }

    fn model() -> TransformerModel<f32> {
        TransformerModel::init(ModelConfig::new(1, 16, 2, 8, 8), 0).unwrap()
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_falls_on_a_memorizable_corpus() {
        let (_, trace) = train(model(), &corpus(), &config(60)).unwrap();
        assert_eq!(trace.epoch_losses.len(), 60);
        let first = trace.epoch_losses[0];
        let last = *trace.epoch_losses.last().unwrap();
        assert!(last < 0.5 * first, "{first} -> {last}");
        assert_eq!(trace.tokens_seen, 60 * 8);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (a, ta) = train(model(), &corpus(), &config(5)).unwrap();
        let (b, tb) = train(model(), &corpus(), &config(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.epoch_losses, tb.epoch_losses);
        let (c, _) = train(model(), &corpus(), &TrainConfig { seed: 9, ..config(5) }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(train(model(), &[], &config(1)).unwrap_err(), TrainError::EmptyCorpus);
        let long = vec![TokenSequence(vec![1; 9])];
        assert!(matches!(train(model(), &long, &config(1)), Err(TrainError::SequenceOverflow { .. })));
        let bad = TrainConfig {
            batch_size: 0,
            ..config(1)
        };
        assert!(matches!(train(model(), &corpus(), &bad), Err(TrainError::InvalidConfig(_))));
        // zero epochs leaves the model untouched
        let (m, trace) = train(model(), &corpus(), &config(0)).unwrap();
        assert_eq!(m, model());
        assert!(trace.epoch_losses.is_empty());
    }
}
