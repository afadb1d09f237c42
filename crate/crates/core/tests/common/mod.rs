//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use attnshap::model::{ModelConfig, NormPlacement, SequenceInput, Transformer};
use attnshap::tensor::Matrix;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// Relative error with a small absolute floor in the denominator so entries
/// that are zero in both routes do not divide by zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn model(seed: u64, norm: NormPlacement, pooler: bool) -> Transformer {
    Transformer::new(ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8 + (seed as usize % 3) * 4,
        d_k: 4,
        d_v: 3,
        d_ff: 16,
        vocab_size: 20,
        n_classes: 3,
        seed,
        norm,
        pooler,
        ..ModelConfig::default()
    })
    .unwrap()
}

pub fn input(seed: u64) -> SequenceInput {
    let body: Vec<usize> = (0..(3 + seed as usize % 5)).map(|i| 2 + (i * 7 + seed as usize) % 18).collect();
    SequenceInput::from_tokens(0, 1, &body)
}

pub fn check_attention(m: &Transformer, x: &SequenceInput, class: usize) -> f64 {
    let trace = m.forward(x).unwrap();
    let grads = m.attention_gradients(&trace, class).unwrap();
    let mut worst = 0f64;
    for l in 0..m.config().n_layers {
        for h in 0..m.config().n_heads {
            let a = trace.attention.get(l, h);
            for i in 0..a.rows() {
                for j in 0..a.cols() {
                    let mut plus = a.clone();
                    plus.add_at(i, j, EPS);
                    let mut minus = a.clone();
                    minus.add_at(i, j, -EPS);
                    let fp = m.logits_with_attention(x, l, h, &plus).unwrap()[class];
                    let fm = m.logits_with_attention(x, l, h, &minus).unwrap()[class];
                    let fd = (fp - fm) / (2.0 * EPS);
                    worst = worst.max(rel_err(grads.get(l, h).get(i, j), fd));
                }
            }
        }
    }
    worst
}

pub fn check_hidden(m: &Transformer, x: &SequenceInput, class: usize) -> f64 {
    let trace = m.forward(x).unwrap();
    let mut worst = 0f64;
    for layer in 1..=m.config().n_layers {
        let g = m.hidden_gradient(&trace, layer, class).unwrap();
        let z: &Matrix = &trace.hidden[layer];
        for i in 0..z.rows() {
            for j in 0..z.cols() {
                let mut plus = z.clone();
                plus.add_at(i, j, EPS);
                let mut minus = z.clone();
                minus.add_at(i, j, -EPS);
                let fd = (m.logits_from_hidden(layer, &plus).unwrap()[class]
                    - m.logits_from_hidden(layer, &minus).unwrap()[class])
                    / (2.0 * EPS);
                worst = worst.max(rel_err(g.get(i, j), fd));
            }
        }
    }
    worst
}

