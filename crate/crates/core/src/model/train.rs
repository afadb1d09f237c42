use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SequenceInput, Transformer};
use crate::error::{Error, Result};
use crate::rng;

/// A labelled input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub input: SequenceInput,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, lr: 3e-3, batch_size: 16, seed: 0, optimizer: Optimizer::Adam }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean cross-entropy over each epoch's batches, measured before each update.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub final_accuracy: f64,
}

fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -(probs[label].max(1e-300)).ln()
}

/// Mean cross-entropy and accuracy of `model` on `data`.
pub fn evaluate(model: &Transformer, data: &[Example]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let per: Vec<(f64, bool)> = data
        .par_iter()
        .map(|ex| {
            let p = model.predict(&ex.input)?;
            Ok((cross_entropy(&p.probs, ex.label), p.label == ex.label))
        })
        .collect::<Result<_>>()?;
    let n = data.len() as f64;
    Ok((per.iter().map(|p| p.0).sum::<f64>() / n, per.iter().filter(|p| p.1).count() as f64 / n))
}

/// Mini-batch cross-entropy training. Deterministic for a given seed: batch
/// order comes from a seeded shuffle and per-example gradients are summed in
/// dataset order.
pub fn train(model: &mut Transformer, data: &[Example], cfg: &TrainConfig) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot train on an empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let n_classes = model.config().n_classes;
    for (i, ex) in data.iter().enumerate() {
        model.validate_input(&ex.input)?;
        if ex.label >= n_classes {
            return Err(Error::InvalidInput(format!("example {} has label {} >= {}", i, ex.label, n_classes)));
        }
    }
    let n_params = model.params().len();
    let (mut m1, mut m2) = (vec![0.0; n_params], vec![0.0; n_params]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut step = 0i32;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, rng::tag::TRAIN_SHUFFLE, epoch as u64));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let model_ref = &*model;
            let per: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &data[i];
                    let trace = model_ref.forward(&ex.input)?;
                    let mut dlogits = trace.probs.clone();
                    dlogits[ex.label] -= 1.0;
                    let g = model_ref.backward(&trace, &dlogits, true)?;
                    Ok((cross_entropy(&trace.probs, ex.label), g.params.expect("requested").flatten()))
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; n_params];
            for (loss, g) in &per {
                loss_sum += loss;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v * scale;
                }
            }
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in epoch {}", epoch)));
            }
            let mut flat = model.params().flatten();
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in flat.iter_mut().zip(&grad) {
                        *p -= cfg.lr * g;
                    }
                }
                Optimizer::Adam => {
                    step += 1;
                    let c1 = 1.0 - b1.powi(step);
                    let c2 = 1.0 - b2.powi(step);
                    for i in 0..n_params {
                        m1[i] = b1 * m1[i] + (1.0 - b1) * grad[i];
                        m2[i] = b2 * m2[i] + (1.0 - b2) * grad[i] * grad[i];
                        flat[i] -= cfg.lr * (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
                    }
                }
            }
            model.params_mut().assign_flat(&flat)?;
        }
        epoch_losses.push(loss_sum / data.len() as f64);
    }
    let (final_loss, final_accuracy) = evaluate(model, data)?;
    Ok(TrainReport { epoch_losses, final_loss, final_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn toy_data() -> Vec<Example> {
        (0..8)
            .map(|i| Example {
                input: SequenceInput::from_tokens(0, 1, &[2 + (i % 3), 3 + (i % 2), if i % 2 == 0 { 6 } else { 7 }]),
                label: i % 2,
            })
            .collect()
    }

    fn model() -> Transformer {
        Transformer::new(ModelConfig { vocab_size: 10, seed: 9, ..ModelConfig::default() }).unwrap()
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut m = model();
        let before = m.params().clone();
        train(&mut m, &toy_data(), &TrainConfig { epochs: 2, lr: 0.0, ..TrainConfig::default() }).unwrap();
        assert_eq!(&before, m.params());
    }

    #[test]
    fn one_small_step_reduces_single_example_loss() {
        let data = vec![toy_data().remove(0)];
        for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
            let mut m = model();
            let (before, _) = evaluate(&m, &data).unwrap();
            train(&mut m, &data, &TrainConfig { epochs: 1, lr: 1e-3, batch_size: 1, seed: 0, optimizer }).unwrap();
            let (after, _) = evaluate(&m, &data).unwrap();
            assert!(after < before, "{:?}: {} !< {}", optimizer, after, before);
        }
    }

    #[test]
    fn identical_seeds_give_identical_parameters() {
        let cfg = TrainConfig { epochs: 3, lr: 1e-2, batch_size: 3, seed: 5, ..TrainConfig::default() };
        let (mut a, mut b) = (model(), model());
        train(&mut a, &toy_data(), &cfg).unwrap();
        train(&mut b, &toy_data(), &cfg).unwrap();
        assert_eq!(a.params().flatten(), b.params().flatten());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(train(&mut model(), &[], &TrainConfig::default()).is_err());
    }
}
