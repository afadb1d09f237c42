use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Rows whose sum deviates from 1 by at most this are accepted as is.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Rows deviating by more than [`ROW_SUM_TOL`] but at most this are renormalised.
pub const ROW_SUM_RENORM_TOL: f64 = 1e-6;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    if !m.is_finite() {
        return Err(Error::InvalidInput("softmax_rows: non-finite input".into()));
    }
    let mut out = m.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    Ok(out)
}

/// Softmax of a single slice, in place. Empty slices are left untouched.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn check_shapes(layers: usize, heads: usize, seq_len: usize, mats: &[Matrix]) -> Result<()> {
    if layers == 0 || heads == 0 {
        return Err(Error::Dimension("stack needs at least one layer and one head".into()));
    }
    if mats.len() != layers * heads {
        return Err(Error::Dimension(format!(
            "expected {} matrices for L={} H={}, got {}",
            layers * heads,
            layers,
            heads,
            mats.len()
        )));
    }
    for (idx, m) in mats.iter().enumerate() {
        if m.shape() != (seq_len, seq_len) {
            return Err(Error::Dimension(format!(
                "matrix {} has shape {:?}, expected ({}, {})",
                idx,
                m.shape(),
                seq_len,
                seq_len
            )));
        }
        if !m.is_finite() {
            return Err(Error::InvalidInput(format!("matrix {} has non-finite entries", idx)));
        }
    }
    Ok(())
}

/// All `A^{ℓh}` of one forward pass, stored layer-major (`ℓ * H + h`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionStack {
    layers: usize,
    heads: usize,
    seq_len: usize,
    mats: Vec<Matrix>,
}

impl AttentionStack {
    /// Validates row-stochasticity. Rows off by at most [`ROW_SUM_RENORM_TOL`]
    /// are renormalised; anything worse is rejected.
    pub fn new(layers: usize, heads: usize, seq_len: usize, mut mats: Vec<Matrix>) -> Result<Self> {
        check_shapes(layers, heads, seq_len, &mats)?;
        for (idx, m) in mats.iter_mut().enumerate() {
            for i in 0..seq_len {
                let row = m.row_mut(i);
                if let Some(v) = row.iter().find(|v| !(-ROW_SUM_TOL..=1.0 + ROW_SUM_TOL).contains(*v)) {
                    return Err(Error::InvalidInput(format!(
                        "attention matrix {} row {} has entry {} outside [0, 1]",
                        idx, i, v
                    )));
                }
                let sum: f64 = row.iter().sum();
                let dev = (sum - 1.0).abs();
                if dev > ROW_SUM_RENORM_TOL {
                    return Err(Error::InvalidInput(format!(
                        "attention matrix {} row {} sums to {} (not row-stochastic)",
                        idx, i, sum
                    )));
                }
                if dev > ROW_SUM_TOL {
                    row.iter_mut().for_each(|v| *v = (*v / sum).max(0.0));
                } else {
                    row.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
        }
        Ok(Self { layers, heads, seq_len, mats })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// `A^{ℓh}` with zero-based `layer` and `head`.
    pub fn get(&self, layer: usize, head: usize) -> &Matrix {
        &self.mats[layer * self.heads + head]
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.mats
    }

    /// Head-averaged attention of `query` at zero-based `layer`.
    pub fn head_mean_row(&self, layer: usize, query: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.seq_len];
        for h in 0..self.heads {
            for (o, v) in out.iter_mut().zip(self.get(layer, h).row(query)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= self.heads as f64);
        out
    }
}

/// `∂ logit_k / ∂A^{ℓh}`, shape-congruent with an [`AttentionStack`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientStack {
    layers: usize,
    heads: usize,
    seq_len: usize,
    mats: Vec<Matrix>,
}

impl GradientStack {
    pub fn new(layers: usize, heads: usize, seq_len: usize, mats: Vec<Matrix>) -> Result<Self> {
        check_shapes(layers, heads, seq_len, &mats)?;
        Ok(Self { layers, heads, seq_len, mats })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn get(&self, layer: usize, head: usize) -> &Matrix {
        &self.mats[layer * self.heads + head]
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.mats
    }
}

/// `M_k`: ReLU-gated gradient-weighted attention averaged over layers and heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionMatrix {
    pub class: usize,
    pub mat: Matrix,
}

impl std::ops::Deref for ContributionMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.mat
    }
}

/// `M_k = 1/(LH) Σ A^{ℓh} ∘ ReLU(G^{ℓh})`.
pub fn contribution_matrix(
    attn: &AttentionStack,
    grads: &GradientStack,
    class: usize,
) -> Result<ContributionMatrix> {
    if (attn.layers, attn.heads, attn.seq_len) != (grads.layers, grads.heads, grads.seq_len) {
        return Err(Error::Dimension(format!(
            "attention stack (L={}, H={}, N={}) vs gradient stack (L={}, H={}, N={})",
            attn.layers, attn.heads, attn.seq_len, grads.layers, grads.heads, grads.seq_len
        )));
    }
    let n = attn.seq_len;
    let mut acc = Matrix::zeros(n, n);
    for (a, g) in attn.mats.iter().zip(&grads.mats) {
        for ((o, &av), &gv) in acc.data_mut().iter_mut().zip(a.data()).zip(g.data()) {
            *o += av * gv.max(0.0);
        }
    }
    acc.scale(1.0 / (attn.layers * attn.heads) as f64);
    Ok(ContributionMatrix { class, mat: acc })
}

/// Element-wise mean of every `A^{ℓh}`.
pub fn average_attention(attn: &AttentionStack) -> Matrix {
    let n = attn.seq_len;
    let mut acc = Matrix::zeros(n, n);
    for a in &attn.mats {
        acc.add_assign(a);
    }
    acc.scale(1.0 / attn.mats.len() as f64);
    acc
}

/// `τ_i = 1/(LHN) Σ_ℓ Σ_h Σ_j A^{ℓh}_{ij}`.
///
/// For a row-stochastic stack this is `1/N` for every token; it is kept as
/// the raw-attention baseline and ties are resolved downstream by index.
pub fn raw_attention_importance(attn: &AttentionStack, token: usize) -> Result<f64> {
    if token >= attn.seq_len {
        return Err(Error::IndexOutOfRange { index: token, len: attn.seq_len });
    }
    let total: f64 = attn.mats.iter().map(|a| a.row(token).iter().sum::<f64>()).sum();
    Ok(total / (attn.layers * attn.heads * attn.seq_len) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&m(&[&[0.0, 0.0], &[1f64.ln(), 3f64.ln()], &[1000.0, 0.0]])).unwrap();
        assert_eq!(s.row(0), &[0.5, 0.5]);
        assert!((s.get(1, 0) - 0.25).abs() < 1e-15 && (s.get(1, 1) - 0.75).abs() < 1e-15);
        assert_eq!(s.get(2, 0), 1.0);
        assert!(s.get(2, 1) < 1e-300);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let bad = Matrix::from_fn(1, 2, |_, j| if j == 0 { f64::INFINITY } else { 0.0 });
        assert!(matches!(softmax_rows(&bad), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn contribution_hand_example() {
        let a = AttentionStack::new(1, 1, 2, vec![m(&[&[0.5, 0.5], &[0.5, 0.5]])]).unwrap();
        let g = GradientStack::new(1, 1, 2, vec![m(&[&[2.0, -2.0], &[4.0, 0.0]])]).unwrap();
        let mk = contribution_matrix(&a, &g, 0).unwrap();
        assert_eq!(mk.mat, m(&[&[1.0, 0.0], &[2.0, 0.0]]));
    }

    #[test]
    fn non_positive_gradients_give_zero() {
        let a = AttentionStack::new(1, 2, 2, vec![m(&[&[0.3, 0.7], &[1.0, 0.0]]); 2]).unwrap();
        let g = GradientStack::new(1, 2, 2, vec![m(&[&[-1.0, 0.0], &[-3.0, -0.1]]); 2]).unwrap();
        assert_eq!(contribution_matrix(&a, &g, 1).unwrap().mat, Matrix::zeros(2, 2));
    }

    #[test]
    fn identical_layers_average_to_the_product() {
        let a1 = m(&[&[0.25, 0.75], &[0.6, 0.4]]);
        let g1 = m(&[&[1.0, 2.0], &[-1.0, 3.0]]);
        let a = AttentionStack::new(2, 1, 2, vec![a1.clone(), a1.clone()]).unwrap();
        let g = GradientStack::new(2, 1, 2, vec![g1.clone(), g1.clone()]).unwrap();
        let expected = a1.hadamard(&g1.map(|v| v.max(0.0)));
        assert!(contribution_matrix(&a, &g, 0).unwrap().mat.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let a = AttentionStack::new(1, 1, 1, vec![Matrix::identity(1)]).unwrap();
        let g = GradientStack::new(2, 1, 1, vec![Matrix::zeros(1, 1); 2]).unwrap();
        assert!(matches!(contribution_matrix(&a, &g, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn average_of_swapped_identities_is_uniform() {
        let a = AttentionStack::new(1, 2, 2, vec![Matrix::identity(2), m(&[&[0.0, 1.0], &[1.0, 0.0]])])
            .unwrap();
        assert_eq!(average_attention(&a), m(&[&[0.5, 0.5], &[0.5, 0.5]]));
        let single = AttentionStack::new(1, 1, 2, vec![m(&[&[0.1, 0.9], &[0.7, 0.3]])]).unwrap();
        assert_eq!(average_attention(&single), *single.get(0, 0));
    }

    #[test]
    fn tau_is_one_over_n() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| {
            let mut r = vec![0.1; 4];
            r[i] = 0.7;
            r
        }).collect();
        let a = AttentionStack::new(1, 1, 4, vec![Matrix::from_rows(&rows).unwrap()]).unwrap();
        for i in 0..4 {
            assert!((raw_attention_importance(&a, i).unwrap() - 0.25).abs() < 1e-12);
        }
        assert!(matches!(raw_attention_importance(&a, 4), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn stack_rejects_pre_softmax_scores_and_renormalises_small_drift() {
        let scores = m(&[&[2.0, -1.0], &[0.5, 3.0]]);
        assert!(AttentionStack::new(1, 1, 2, vec![scores]).is_err());
        let drift = m(&[&[0.5 + 5e-7, 0.5], &[0.5, 0.5]]);
        let s = AttentionStack::new(1, 1, 2, vec![drift]).unwrap();
        let sum: f64 = s.get(0, 0).row(0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let far = m(&[&[0.5 + 1e-5, 0.5], &[0.5, 0.5]]);
        assert!(AttentionStack::new(1, 1, 2, vec![far]).is_err());
    }
}
