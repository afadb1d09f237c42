use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    /// L2 penalty on the weights (not the bias).
    #[serde(default)]
    pub l2: f64,
    /// Fraction of each side held out for the accuracy estimate.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 200, lr: 0.5, l2: 0.0, holdout: 0.2, seed: 0 }
    }
}

/// Logistic-regression probe `σ(w·a + b)`, positive class = concept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Accuracy on the held-out rows.
    pub accuracy: f64,
}

impl Probe {
    pub fn logit(&self, a: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(a).map(|(w, x)| w * x).sum::<f64>()
    }
}

fn split(rows: usize, holdout: f64, seed: u64, side: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..rows).collect();
    idx.shuffle(&mut rng::stream(seed, rng::tag::PROBE_SPLIT, side));
    let n_test = if rows >= 2 { ((rows as f64 * holdout).round() as usize).clamp(1, rows - 1) } else { 0 };
    let test = idx.split_off(rows - n_test);
    (idx, test)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fits a probe by full-batch gradient descent on the mean logistic loss.
pub fn train_probe(pos: &[Vec<f64>], neg: &[Vec<f64>], cfg: &ProbeConfig) -> Result<Probe> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidInput("probe needs both positive and negative activations".into()));
    }
    let d = pos[0].len();
    if d == 0 || pos.iter().chain(neg).any(|a| a.len() != d) {
        return Err(Error::Dimension("activation vectors must share one non-zero length".into()));
    }
    if !(0.0..1.0).contains(&cfg.holdout) {
        return Err(Error::Config(format!("holdout fraction {} not in [0, 1)", cfg.holdout)));
    }
    let (pos_train, pos_test) = split(pos.len(), cfg.holdout, cfg.seed, 0);
    let (neg_train, neg_test) = split(neg.len(), cfg.holdout, cfg.seed, 1);
    let train: Vec<(&[f64], f64)> = pos_train
        .iter()
        .map(|&i| (pos[i].as_slice(), 1.0))
        .chain(neg_train.iter().map(|&i| (neg[i].as_slice(), 0.0)))
        .collect();

    let normal = Normal::new(0.0, 0.01).expect("valid normal");
    let mut r = rng::stream(cfg.seed, rng::tag::PROBE_INIT, 0);
    let mut w: Vec<f64> = (0..d).map(|_| normal.sample(&mut r)).collect();
    let mut b = 0.0;
    let scale = 1.0 / train.len() as f64;
    for _ in 0..cfg.epochs {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (a, y) in &train {
            let z = b + w.iter().zip(*a).map(|(w, x)| w * x).sum::<f64>();
            let e = sigmoid(z) - y;
            gb += e;
            for (g, x) in gw.iter_mut().zip(*a) {
                *g += e * x;
            }
        }
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= cfg.lr * (gi * scale + cfg.l2 * *wi);
        }
        b -= cfg.lr * gb * scale;
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Numeric("probe weights diverged".into()));
    }

    let mut probe = Probe { weights: w, bias: b, accuracy: 0.0 };
    let mut test: Vec<(&[f64], bool)> = pos_test
        .iter()
        .map(|&i| (pos[i].as_slice(), true))
        .chain(neg_test.iter().map(|&i| (neg[i].as_slice(), false)))
        .collect();
    if test.is_empty() {
        test = train.iter().map(|(a, y)| (*a, *y > 0.5)).collect();
    }
    let correct = test.iter().filter(|(a, y)| (probe.logit(a) > 0.0) == *y).count();
    probe.accuracy = correct as f64 / test.len() as f64;
    Ok(probe)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(center: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut r = rng::stream(seed, 99, 0);
        (0..n).map(|_| vec![center + noise.sample(&mut r), noise.sample(&mut r), noise.sample(&mut r)]).collect()
    }

    #[test]
    fn separable_clusters_are_learned() {
        let p = train_probe(&cluster(1.0, 50, 1), &cluster(-1.0, 50, 2), &ProbeConfig::default()).unwrap();
        assert_eq!(p.accuracy, 1.0);
        assert!(p.weights[0] > 0.0);
    }

    #[test]
    fn same_distribution_is_near_chance() {
        let mut total = 0.0;
        for seed in 0..20 {
            let cfg = ProbeConfig { seed, ..ProbeConfig::default() };
            total += train_probe(&cluster(0.0, 100, 2 * seed + 10), &cluster(0.0, 100, 2 * seed + 11), &cfg).unwrap().accuracy;
        }
        let mean = total / 20.0;
        assert!((mean - 0.5).abs() <= 0.1, "mean accuracy {}", mean);
    }

    #[test]
    fn zero_learning_rate_keeps_initial_weights() {
        let pos = cluster(1.0, 10, 3);
        let neg = cluster(-1.0, 10, 4);
        let cfg = ProbeConfig { lr: 0.0, seed: 5, ..ProbeConfig::default() };
        let a = train_probe(&pos, &neg, &cfg).unwrap();
        let b = train_probe(&pos, &neg, &ProbeConfig { epochs: 0, ..cfg }).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.bias, 0.0);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(train_probe(&cluster(1.0, 5, 1), &[], &ProbeConfig::default()).is_err());
    }
}
