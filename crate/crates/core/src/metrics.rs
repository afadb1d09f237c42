//! Faithfulness of attributions: weighted F1 on reduced inputs,
//! comprehensiveness and sufficiency.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mask_tokens, Example, SequenceInput, Transformer};
use crate::rng;
use crate::shapley::{attribute, AttributeOptions, AttributionResult, Method};

/// What reduced-input predictions are compared against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Reference {
    /// The model's prediction on the full input.
    #[default]
    Prediction,
    Gold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Percent of tokens kept for the F1 score.
    pub b: f64,
    /// Percents removed or kept for comprehensiveness and sufficiency.
    pub bins: Vec<f64>,
    #[serde(default)]
    pub reference: F1Reference,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { b: 20.0, bins: vec![0.0, 10.0, 20.0, 50.0], reference: F1Reference::Prediction }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins.is_empty() {
            return Err(Error::Config("metric bins must not be empty".into()));
        }
        if let Some(p) = std::iter::once(&self.b).chain(&self.bins).find(|p| !(0.0..=100.0).contains(*p)) {
            return Err(Error::Config(format!("percent {} outside [0, 100]", p)));
        }
        Ok(())
    }
}

/// Number of tokens in the top `b` percent of `n`, rounding halves up.
pub fn top_count(b: f64, n: usize) -> usize {
    ((b * n as f64 / 100.0 + 0.5).floor() as usize).min(n)
}

/// Token positions of the top `b` percent of scores. Ties go to the lower
/// position.
pub fn top_b_tokens(scores: &AttributionResult, b: f64) -> Result<Vec<usize>> {
    if !(0.0..=100.0).contains(&b) {
        return Err(Error::InvalidInput(format!("percent {} outside [0, 100]", b)));
    }
    let mut order: Vec<usize> = (0..scores.scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores.scores[j]
            .total_cmp(&scores.scores[i])
            .then(scores.player_indices[i].cmp(&scores.player_indices[j]))
    });
    let mut keep: Vec<usize> = order[..top_count(b, order.len())].iter().map(|&i| scores.player_indices[i]).collect();
    keep.sort_unstable();
    Ok(keep)
}

/// `x` with everything but the top `b` percent masked.
pub fn keep_top(x: &SequenceInput, scores: &AttributionResult, b: f64) -> Result<SequenceInput> {
    mask_tokens(x, &top_b_tokens(scores, b)?)
}

/// `x` with the top `b` percent masked.
pub fn remove_top(x: &SequenceInput, scores: &AttributionResult, b: f64) -> Result<SequenceInput> {
    let top = top_b_tokens(scores, b)?;
    let keep: Vec<usize> = x.original_indices().into_iter().filter(|p| top.binary_search(p).is_err()).collect();
    mask_tokens(x, &keep)
}

/// Support-weighted mean of per-class F1 scores.
pub fn weighted_average(f1: &[f64], support: &[usize]) -> f64 {
    let total: usize = support.iter().sum();
    if total == 0 {
        return 0.0;
    }
    f1.iter().zip(support).map(|(f, &s)| f * s as f64).sum::<f64>() / total as f64
}

/// Weighted F1 of `predicted` against `reference`. Classes with no predicted
/// or no reference members score 0.
pub fn f1_weighted(reference: &[usize], predicted: &[usize]) -> Result<f64> {
    if reference.is_empty() || reference.len() != predicted.len() {
        return Err(Error::InvalidInput("F1 needs equally long, non-empty label lists".into()));
    }
    let classes = reference.iter().chain(predicted).max().unwrap() + 1;
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut support = vec![0usize; classes];
    for (&r, &p) in reference.iter().zip(predicted) {
        support[r] += 1;
        if r == p {
            tp[r] += 1;
        } else {
            fp[p] += 1;
        }
    }
    let f1: Vec<f64> = (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + (support[c] - tp[c]);
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect();
    Ok(weighted_average(&f1, &support))
}

fn prob(model: &Transformer, x: &SequenceInput, class: usize) -> Result<f64> {
    Ok(model.predict(x)?.probs[class])
}

fn bin_average(bins: &[f64], mut term: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    if bins.is_empty() {
        return Err(Error::InvalidInput("no bins given".into()));
    }
    let mut total = 0.0;
    for &b in bins {
        total += term(b)?;
    }
    Ok(total / (bins.len() + 1) as f64)
}

/// Average drop in `f_class` when the top tokens are masked.
pub fn comprehensiveness(
    model: &Transformer,
    x: &SequenceInput,
    scores: &AttributionResult,
    bins: &[f64],
    class: usize,
) -> Result<f64> {
    let full = prob(model, x, class)?;
    bin_average(bins, |b| Ok(full - prob(model, &remove_top(x, scores, b)?, class)?))
}

/// Average drop in `f_class` when only the top tokens are kept.
pub fn sufficiency(
    model: &Transformer,
    x: &SequenceInput,
    scores: &AttributionResult,
    bins: &[f64],
    class: usize,
) -> Result<f64> {
    let full = prob(model, x, class)?;
    bin_average(bins, |b| Ok(full - prob(model, &keep_top(x, scores, b)?, class)?))
}

/// Per-sample metric values for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub class: usize,
    pub reference: usize,
    pub reduced_prediction: usize,
    pub comprehensiveness: f64,
    pub sufficiency: f64,
}

/// Scores one sample with an existing attribution.
pub fn sample_metrics(
    model: &Transformer,
    example: &Example,
    scores: &AttributionResult,
    cfg: &MetricConfig,
) -> Result<SampleMetrics> {
    let full = model.predict(&example.input)?;
    let class = full.label;
    let reduced = model.predict(&keep_top(&example.input, scores, cfg.b)?)?.label;
    Ok(SampleMetrics {
        class,
        reference: match cfg.reference {
            F1Reference::Prediction => class,
            F1Reference::Gold => example.label,
        },
        reduced_prediction: reduced,
        comprehensiveness: comprehensiveness(model, &example.input, scores, &cfg.bins, class)?,
        sufficiency: sufficiency(model, &example.input, scores, &cfg.bins, class)?,
    })
}

/// Mean with its normal-approximation 95% half-width.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: Method,
    pub dataset: String,
    pub f1: f64,
    pub comprehensiveness: f64,
    pub comp_ci: f64,
    pub sufficiency: f64,
    pub suff_ci: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn from_samples(method: Method, dataset: &str, samples: &[SampleMetrics]) -> Result<Self> {
        let reference: Vec<usize> = samples.iter().map(|s| s.reference).collect();
        let reduced: Vec<usize> = samples.iter().map(|s| s.reduced_prediction).collect();
        let comp: Vec<f64> = samples.iter().map(|s| s.comprehensiveness).collect();
        let suff: Vec<f64> = samples.iter().map(|s| s.sufficiency).collect();
        let (comprehensiveness, comp_ci) = mean_ci(&comp);
        let (sufficiency, suff_ci) = mean_ci(&suff);
        Ok(Self {
            method,
            dataset: dataset.to_string(),
            f1: f1_weighted(&reference, &reduced)?,
            comprehensiveness,
            comp_ci,
            sufficiency,
            suff_ci,
            n: samples.len(),
        })
    }
}

/// Seed used for the attribution of sample `index`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    rng::stream_key(seed, rng::tag::EVAL_SAMPLE, index as u64)
}

/// Attributes every sample with `method` (for the class predicted on the
/// full input) and scores it.
pub fn evaluate_method(
    model: &Transformer,
    dataset: &[Example],
    method: Method,
    cfg: &MetricConfig,
    opts: &AttributeOptions,
) -> Result<Vec<(AttributionResult, SampleMetrics)>> {
    dataset
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let class = model.predict(&ex.input)?.label;
            let o = AttributeOptions { seed: sample_seed(opts.seed, i), ..*opts };
            let attr = attribute(method, model, &ex.input, class, &o)
                .map_err(|e| annotate(e, &format!("sample {}", i)))?;
            let m = sample_metrics(model, ex, &attr, cfg)?;
            Ok((attr, m))
        })
        .collect()
}

fn annotate(e: Error, context: &str) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{}: {}", context, m)),
        Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {}", context, m)),
        other => other,
    }
}

/// One report per method. A method that fails on any sample yields an error
/// for its row and does not affect the others.
pub fn evaluate_suite(
    model: &Transformer,
    dataset: &[Example],
    dataset_name: &str,
    methods: &[Method],
    cfg: &MetricConfig,
    opts: &AttributeOptions,
) -> Result<Vec<(Method, Result<MetricReport>)>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    Ok(methods
        .iter()
        .map(|&m| {
            let row = evaluate_method(model, dataset, m, cfg, opts).and_then(|rows| {
                let samples: Vec<SampleMetrics> = rows.into_iter().map(|(_, s)| s).collect();
                MetricReport::from_samples(m, dataset_name, &samples)
            });
            (m, row)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use std::time::Duration;

    fn result(scores: Vec<f64>, players: Vec<usize>) -> AttributionResult {
        AttributionResult {
            method: Method::Att,
            class: 0,
            seed: None,
            n_samples: None,
            scores,
            player_indices: players,
            base_value: None,
            wall_time: Duration::ZERO,
        }
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(top_count(34.0, 3), 1);
        assert_eq!(top_count(50.0, 3), 2);
        assert_eq!(top_count(20.0, 10), 2);
        assert_eq!(top_count(0.0, 10), 0);
        assert_eq!(top_count(100.0, 7), 7);
    }

    #[test]
    fn top_b_examples() {
        let r = result(vec![0.1, 0.9, 0.5], vec![0, 1, 2]);
        assert_eq!(top_b_tokens(&r, 34.0).unwrap(), vec![1]);
        assert_eq!(top_b_tokens(&r, 100.0).unwrap(), vec![0, 1, 2]);
        assert!(top_b_tokens(&r, 0.0).unwrap().is_empty());
        let tied = result(vec![0.4; 3], vec![1, 2, 3]);
        assert_eq!(top_b_tokens(&tied, 67.0).unwrap(), vec![1, 2]);
    }

    #[test]
    fn f1_identities() {
        assert_eq!(f1_weighted(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 1.0);
        assert_eq!(f1_weighted(&[0, 1, 0, 1], &[1, 0, 1, 0]).unwrap(), 0.0);
        assert!((weighted_average(&[1.0, 0.5, 0.0], &[2, 1, 1]) - 0.625).abs() < 1e-15);
    }

    #[test]
    fn f1_by_hand() {
        // class 0: tp 2 fp 1 fn 0 -> 0.8; class 1: tp 1 fp 0 fn 1 -> 2/3
        let f = f1_weighted(&[0, 0, 1, 1], &[0, 0, 1, 0]).unwrap();
        assert!((f - (2.0 * 0.8 + 2.0 * (2.0 / 3.0)) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_bins_and_full_keep_give_zero_terms() {
        let m = Transformer::new(ModelConfig { seed: 9, vocab_size: 12, ..ModelConfig::default() }).unwrap();
        let x = SequenceInput::from_tokens(0, 1, &[4, 5, 6, 7]);
        let r = result(vec![0.3, 0.1, 0.9, 0.2], vec![1, 2, 3, 4]);
        assert_eq!(comprehensiveness(&m, &x, &r, &[0.0], 1).unwrap(), 0.0);
        assert_eq!(sufficiency(&m, &x, &r, &[100.0], 0).unwrap(), 0.0);
        let all_masked = mask_tokens(&x, &[]).unwrap();
        let gap = m.predict(&x).unwrap().probs[1] - m.predict(&all_masked).unwrap().probs[1];
        assert!((sufficiency(&m, &x, &r, &[0.0], 1).unwrap() - gap / 2.0).abs() < 1e-15);
        assert!(comprehensiveness(&m, &x, &r, &[], 1).is_err());
    }

    #[test]
    fn ci_of_duplicated_data_shrinks() {
        let v = vec![0.1, 0.4, 0.3, 0.9];
        let doubled: Vec<f64> = v.iter().chain(&v).cloned().collect();
        let (m1, c1) = mean_ci(&v);
        let (m2, c2) = mean_ci(&doubled);
        assert!((m1 - m2).abs() < 1e-15);
        assert!(c2 < c1);
        assert_eq!(mean_ci(&[0.5]).1, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(MetricConfig::default().validate().is_ok());
        assert!(MetricConfig { bins: vec![], ..MetricConfig::default() }.validate().is_err());
        assert!(MetricConfig { b: 120.0, ..MetricConfig::default() }.validate().is_err());
    }
}
