use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::Cav;
use crate::error::{Error, Result};
use crate::model::{SequenceInput, Transformer};
use crate::tensor::Matrix;

fn check_cav(model: &Transformer, layer: usize, cav: &Cav) -> Result<()> {
    let d = model.config().d_model;
    if cav.direction.len() != d {
        return Err(Error::Dimension(format!("CAV has {} entries, model width is {}", cav.direction.len(), d)));
    }
    if cav.layer != layer {
        return Err(Error::InvalidInput(format!("CAV was trained at layer {}, not {}", cav.layer, layer)));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Everything about one input that the concept scores need, independent of
/// the CAV: the layer gradient of the class logit and the head-averaged CLS
/// attention of the block producing that layer.
#[derive(Clone, Debug)]
pub struct SensitivityBasis {
    pub layer: usize,
    pub class: usize,
    pub gradient: Matrix,
    pub cls_attention: Vec<f64>,
}

impl SensitivityBasis {
    pub fn new(model: &Transformer, x: &SequenceInput, layer: usize, class: usize) -> Result<Self> {
        let trace = model.forward(x)?;
        let gradient = model.hidden_gradient(&trace, layer, class)?;
        let cls_attention = trace.attention.head_mean_row(layer - 1, x.cls_index());
        Ok(Self { layer, class, gradient, cls_attention })
    }

    /// Gradient of the CLS row along `v`.
    pub fn directional(&self, v: &[f64]) -> f64 {
        dot(self.gradient.row(0), v)
    }

    /// `S_i = Ā_{CLS,i} (∇_i · v)` for every token.
    pub fn per_token(&self, v: &[f64]) -> Vec<f64> {
        (0..self.gradient.rows()).map(|i| self.cls_attention[i] * dot(self.gradient.row(i), v)).collect()
    }

    pub fn aggregate(&self, v: &[f64]) -> f64 {
        let s = self.per_token(v);
        s.iter().sum::<f64>() / s.len() as f64
    }

    pub fn positive(&self, v: &[f64], variant: TcavVariant) -> bool {
        match variant {
            TcavVariant::Tcav => self.directional(v) > 0.0,
            TcavVariant::TTcav => self.aggregate(v) > 0.0,
        }
    }
}

/// Sample-level directional derivative of the class logit along the CAV,
/// read from the CLS row of the layer gradient.
pub fn directional_derivative(model: &Transformer, x: &SequenceInput, layer: usize, class: usize, cav: &Cav) -> Result<f64> {
    check_cav(model, layer, cav)?;
    Ok(SensitivityBasis::new(model, x, layer, class)?.directional(&cav.direction))
}

/// Per-token attention-weighted directional derivatives of one input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    pub input_id: Option<String>,
    pub concept: String,
    pub class: usize,
    pub layer: usize,
    pub per_token: Vec<f64>,
    pub aggregate: f64,
    /// Head-averaged CLS attention used as the token weights.
    pub attention: Vec<f64>,
}

pub fn token_directional_derivatives(
    model: &Transformer,
    x: &SequenceInput,
    layer: usize,
    class: usize,
    cav: &Cav,
) -> Result<SensitivityRecord> {
    check_cav(model, layer, cav)?;
    let basis = SensitivityBasis::new(model, x, layer, class)?;
    let per_token = basis.per_token(&cav.direction);
    let aggregate = per_token.iter().sum::<f64>() / per_token.len() as f64;
    Ok(SensitivityRecord {
        input_id: None,
        concept: cav.concept.clone(),
        class,
        layer,
        per_token,
        aggregate,
        attention: basis.cls_attention,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum TcavVariant {
    #[serde(rename = "TCAV")]
    Tcav,
    #[default]
    #[serde(rename = "T-TCAV")]
    TTcav,
}

impl TcavVariant {
    pub fn name(self) -> &'static str {
        match self {
            TcavVariant::Tcav => "TCAV",
            TcavVariant::TTcav => "T-TCAV",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcavReport {
    pub concept: String,
    pub class: usize,
    pub layer: usize,
    pub variant: TcavVariant,
    pub score: f64,
    pub n_positive: usize,
    pub n_inputs: usize,
}

/// Fraction of bases with a strictly positive score under `v`.
pub fn score_bases(bases: &[SensitivityBasis], v: &[f64], variant: TcavVariant) -> Result<(usize, f64)> {
    if bases.is_empty() {
        return Err(Error::InvalidInput("no inputs to score".into()));
    }
    let count = bases.iter().filter(|b| b.positive(v, variant)).count();
    Ok((count, count as f64 / bases.len() as f64))
}

pub fn tcav_scores(
    model: &Transformer,
    inputs: &[SequenceInput],
    layer: usize,
    class: usize,
    cav: &Cav,
    variant: TcavVariant,
) -> Result<TcavReport> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("no inputs to score".into()));
    }
    check_cav(model, layer, cav)?;
    let bases = inputs
        .iter()
        .map(|x| SensitivityBasis::new(model, x, layer, class))
        .collect::<Result<Vec<_>>>()?;
    let (n_positive, score) = score_bases(&bases, &cav.direction, variant)?;
    Ok(TcavReport { concept: cav.concept.clone(), class, layer, variant, score, n_positive, n_inputs: inputs.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub mean: f64,
    pub t: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Significance level of the two-sided test.
pub const ALPHA: f64 = 0.05;

/// One-sample two-sided t-test of the per-CAV scores against 0.5.
///
/// Zero spread has no t statistic: p is 1 when the mean is exactly 0.5 and
/// 0 otherwise.
pub fn significance_test(scores: &[f64]) -> Result<Significance> {
    let n = scores.len();
    if n < 2 {
        return Err(Error::InvalidInput("the t-test needs at least two scores".into()));
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let (t, p) = if var == 0.0 {
        if mean == 0.5 {
            (0.0, 1.0)
        } else {
            ((mean - 0.5).signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = (mean - 0.5) / (var / n as f64).sqrt();
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Numeric(e.to_string()))?;
        (t, (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
    };
    Ok(Significance { mean, t, p_value: p, reject: p < ALPHA })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_half_is_not_rejected() {
        let s = significance_test(&[0.5; 10]).unwrap();
        assert_eq!(s.p_value, 1.0);
        assert!(!s.reject);
    }

    #[test]
    fn constant_away_from_half_is_rejected() {
        let s = significance_test(&[0.8; 5]).unwrap();
        assert_eq!(s.p_value, 0.0);
        assert!(s.reject);
    }

    #[test]
    fn high_scores_are_rejected() {
        let d = Normal::new(0.9, 0.01).unwrap();
        let mut r = crate::rng::stream(1, 0, 0);
        let scores: Vec<f64> = (0..50).map(|_| d.sample(&mut r)).collect();
        let s = significance_test(&scores).unwrap();
        assert!(s.reject && s.p_value < 1e-12);
    }

    #[test]
    fn symmetric_scores_give_p_one() {
        let s = significance_test(&[0.3, 0.7, 0.4, 0.6]).unwrap();
        assert!(s.t.abs() < 1e-12);
        assert!((s.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn t_statistic_matches_hand_value() {
        let s = significance_test(&[0.5, 0.6, 0.7, 0.6]).unwrap();
        let sd = (0.02f64 / 3.0).sqrt();
        assert!((s.t - 0.1 / (sd / 2.0)).abs() < 1e-12);
        assert!(!s.reject);
    }

    #[test]
    fn too_few_scores() {
        assert!(significance_test(&[0.1]).is_err());
    }
}
