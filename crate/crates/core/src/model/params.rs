use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

/// Weights of one encoder block. Row vectors (biases, norm gains) are `1 × n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w_q: Vec<Matrix>,
    pub w_k: Vec<Matrix>,
    pub w_v: Vec<Matrix>,
    pub w_o: Matrix,
    pub b_o: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub w_ff1: Matrix,
    pub b_ff1: Matrix,
    pub w_ff2: Matrix,
    pub b_ff2: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

/// Every trainable tensor of the model.
///
/// The canonical ordering used by [`Params::flatten`] and by checkpoints is:
/// token embeddings; patch projection and bias (if configured); for each
/// layer `W_Q` per head, `W_K` per head, `W_V` per head, `W_O`, `b_O`,
/// norm-1 gain and bias, `W_1`, `b_1`, `W_2`, `b_2`, norm-2 gain and bias;
/// pooler weight and bias (if configured); head weight and bias. Each tensor
/// is written row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub embed: Matrix,
    pub patch_w: Option<Matrix>,
    pub patch_b: Option<Matrix>,
    pub layers: Vec<LayerParams>,
    pub pool_w: Option<Matrix>,
    pub pool_b: Option<Matrix>,
    pub head_w: Matrix,
    pub head_b: Matrix,
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Matrix {
    let normal = Normal::new(0.0, std).expect("positive std");
    Matrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

impl Params {
    /// Seeded initialisation: embeddings `N(0, 1)`, dense weights
    /// `N(0, 1/fan_in)`, biases zero, norm gains one.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut r = rng::stream(cfg.seed, rng::tag::INIT, 0);
        let d = cfg.d_model;
        let inv = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let embed = gaussian(cfg.vocab_size, d, 1.0, &mut r);
        let (patch_w, patch_b) = match cfg.patch_dim {
            Some(p) => (Some(gaussian(p, d, inv(p), &mut r)), Some(Matrix::zeros(1, d))),
            None => (None, None),
        };
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                w_q: (0..cfg.n_heads).map(|_| gaussian(d, cfg.d_k, inv(d), &mut r)).collect(),
                w_k: (0..cfg.n_heads).map(|_| gaussian(d, cfg.d_k, inv(d), &mut r)).collect(),
                w_v: (0..cfg.n_heads).map(|_| gaussian(d, cfg.d_v, inv(d), &mut r)).collect(),
                w_o: gaussian(cfg.n_heads * cfg.d_v, d, inv(cfg.n_heads * cfg.d_v), &mut r),
                b_o: Matrix::zeros(1, d),
                ln1_gain: Matrix::from_fn(1, d, |_, _| 1.0),
                ln1_bias: Matrix::zeros(1, d),
                w_ff1: gaussian(d, cfg.d_ff, inv(d), &mut r),
                b_ff1: Matrix::zeros(1, cfg.d_ff),
                w_ff2: gaussian(cfg.d_ff, d, inv(cfg.d_ff), &mut r),
                b_ff2: Matrix::zeros(1, d),
                ln2_gain: Matrix::from_fn(1, d, |_, _| 1.0),
                ln2_bias: Matrix::zeros(1, d),
            })
            .collect();
        let (pool_w, pool_b) = if cfg.pooler {
            (Some(gaussian(d, d, inv(d), &mut r)), Some(Matrix::zeros(1, d)))
        } else {
            (None, None)
        };
        let head_w = gaussian(d, cfg.n_classes, inv(d), &mut r);
        let head_b = Matrix::zeros(1, cfg.n_classes);
        Self { embed, patch_w, patch_b, layers, pool_w, pool_b, head_w, head_b }
    }

    /// Same structure, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|m| m.data_mut().iter_mut().for_each(|v| *v = 0.0));
        z
    }

    /// Tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.embed];
        out.extend(self.patch_w.iter());
        out.extend(self.patch_b.iter());
        for l in &self.layers {
            out.extend(l.w_q.iter());
            out.extend(l.w_k.iter());
            out.extend(l.w_v.iter());
            out.extend([
                &l.w_o, &l.b_o, &l.ln1_gain, &l.ln1_bias, &l.w_ff1, &l.b_ff1, &l.w_ff2, &l.b_ff2,
                &l.ln2_gain, &l.ln2_bias,
            ]);
        }
        out.extend(self.pool_w.iter());
        out.extend(self.pool_b.iter());
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    /// Visits tensors mutably in canonical order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut Matrix)) {
        f(&mut self.embed);
        self.patch_w.iter_mut().for_each(&mut f);
        self.patch_b.iter_mut().for_each(&mut f);
        for l in &mut self.layers {
            l.w_q.iter_mut().for_each(&mut f);
            l.w_k.iter_mut().for_each(&mut f);
            l.w_v.iter_mut().for_each(&mut f);
            for m in [
                &mut l.w_o,
                &mut l.b_o,
                &mut l.ln1_gain,
                &mut l.ln1_bias,
                &mut l.w_ff1,
                &mut l.b_ff1,
                &mut l.w_ff2,
                &mut l.b_ff2,
                &mut l.ln2_gain,
                &mut l.ln2_bias,
            ] {
                f(m);
            }
        }
        self.pool_w.iter_mut().for_each(&mut f);
        self.pool_b.iter_mut().for_each(&mut f);
        f(&mut self.head_w);
        f(&mut self.head_b);
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|m| m.data().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for m in self.tensors() {
            out.extend_from_slice(m.data());
        }
        out
    }

    /// Overwrites every tensor from a flat vector in canonical order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Dimension(format!(
                "parameter blob has {} values, model needs {}",
                flat.len(),
                self.len()
            )));
        }
        let mut at = 0;
        self.for_each_mut(|m| {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        });
        Ok(())
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        let src = other.flatten();
        let mut at = 0;
        self.for_each_mut(|m| {
            for v in m.data_mut() {
                *v += scale * src[at];
                at += 1;
            }
        });
    }
}
