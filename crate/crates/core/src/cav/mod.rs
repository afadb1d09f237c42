//! Concept activation vectors and token-level concept sensitivity.

mod probe;
mod sensitivity;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SequenceInput, Transformer};
use crate::rng;

pub use probe::{train_probe, Probe, ProbeConfig};
pub use sensitivity::{
    directional_derivative, score_bases, significance_test, tcav_scores, token_directional_derivatives,
    SensitivityBasis, SensitivityRecord, Significance, TcavReport, TcavVariant, ALPHA,
};

/// Concept set size used for each side of a probe.
pub const DEFAULT_CONCEPT_SAMPLES: usize = 120;
pub const DEFAULT_TCAV_INPUTS: usize = 200;
pub const DEFAULT_N_CAVS: usize = 50;

/// Unit concept direction in the residual space after block `layer`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cav {
    pub concept: String,
    pub layer: usize,
    pub direction: Vec<f64>,
    /// Held-out probe accuracy.
    pub accuracy: f64,
}

/// Normalizes the probe weights; the direction increases the concept logit.
pub fn cav_from_probe(probe: &Probe, concept: &str, layer: usize) -> Result<Cav> {
    let norm = probe.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Numeric("probe weight vector has zero or non-finite norm".into()));
    }
    Ok(Cav {
        concept: concept.to_string(),
        layer,
        direction: probe.weights.iter().map(|w| w / norm).collect(),
        accuracy: probe.accuracy,
    })
}

/// Named set of example inputs for one concept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptSet {
    pub name: String,
    pub inputs: Vec<SequenceInput>,
}

/// Token rows of `Z^layer` for every input, per input.
pub fn activations_per_input(model: &Transformer, inputs: &[SequenceInput], layer: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    check_layer(model, layer)?;
    inputs
        .par_iter()
        .map(|x| {
            let z = &model.forward(x)?.hidden[layer];
            Ok((0..z.rows()).map(|i| z.row(i).to_vec()).collect())
        })
        .collect()
}

/// Every token representation of every input at `layer`, in input order.
pub fn collect_activations(model: &Transformer, inputs: &[SequenceInput], layer: usize) -> Result<Vec<Vec<f64>>> {
    Ok(activations_per_input(model, inputs, layer)?.into_iter().flatten().collect())
}

fn check_layer(model: &Transformer, layer: usize) -> Result<()> {
    if layer == 0 || layer > model.config().n_layers {
        return Err(Error::IndexOutOfRange { index: layer, len: model.config().n_layers + 1 });
    }
    Ok(())
}

/// `n` indices out of `len`: without replacement when possible.
fn draw_indices(len: usize, n: usize, seed: u64, side: u64) -> Vec<usize> {
    let mut r = rng::stream(seed, rng::tag::CONCEPT_SAMPLE, side);
    if n <= len {
        let mut v = sample(&mut r, len, n).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).map(|_| r.random_range(0..len)).collect()
    }
}

/// Where the negative examples of a concept probe come from.
#[derive(Clone, Debug)]
pub enum ConceptSource<'a> {
    /// Concept `target` against the union of the other sets.
    Relative { concepts: &'a [ConceptSet], target: usize },
    /// Two disjoint random draws from one pool, TCAV's random baseline.
    Random { name: String, pool: &'a [SequenceInput] },
}

impl ConceptSource<'_> {
    pub fn name(&self) -> &str {
        match self {
            ConceptSource::Relative { concepts, target } => &concepts[*target].name,
            ConceptSource::Random { name, .. } => name,
        }
    }
}

/// Precomputed activations for a concept source.
struct Bank {
    name: String,
    positive: Vec<Vec<Vec<f64>>>,
    negative: Vec<Vec<Vec<f64>>>,
    /// Random pools draw both sides from `positive` without overlap.
    shared: bool,
}

impl Bank {
    fn new(model: &Transformer, source: &ConceptSource, layer: usize) -> Result<Self> {
        match source {
            ConceptSource::Relative { concepts, target } => {
                if concepts.len() < 2 {
                    return Err(Error::InvalidInput("relative CAVs need at least two concepts".into()));
                }
                let target_set = concepts
                    .get(*target)
                    .ok_or(Error::IndexOutOfRange { index: *target, len: concepts.len() })?;
                let others: Vec<SequenceInput> = concepts
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i != target)
                    .flat_map(|(_, c)| c.inputs.iter().cloned())
                    .collect();
                Ok(Self {
                    name: target_set.name.clone(),
                    positive: activations_per_input(model, &target_set.inputs, layer)?,
                    negative: activations_per_input(model, &others, layer)?,
                    shared: false,
                })
            }
            ConceptSource::Random { name, pool } => Ok(Self {
                name: name.clone(),
                positive: activations_per_input(model, pool, layer)?,
                negative: Vec::new(),
                shared: true,
            }),
        }
    }

    fn sides(&self, n_pos: usize, n_neg: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let rows = |set: &[Vec<Vec<f64>>], idx: &[usize]| idx.iter().flat_map(|&i| set[i].iter().cloned()).collect();
        if self.shared {
            let len = self.positive.len();
            if n_pos + n_neg > len {
                return Err(Error::Data(format!(
                    "random pool has {} inputs, {} + {} requested",
                    len, n_pos, n_neg
                )));
            }
            let idx = draw_indices(len, n_pos + n_neg, seed, 0);
            let mut order = idx.clone();
            // `sample` sorted the draw; split it by a seeded shuffle instead of by value.
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng::stream(seed, rng::tag::CONCEPT_SAMPLE, 2));
            let (p, n) = order.split_at(n_pos);
            return Ok((rows(&self.positive, p), rows(&self.positive, n)));
        }
        if self.positive.len() < n_pos {
            return Err(Error::Data(format!(
                "concept `{}` has {} inputs, {} requested",
                self.name,
                self.positive.len(),
                n_pos
            )));
        }
        if self.negative.is_empty() {
            return Err(Error::Data("no negative inputs available".into()));
        }
        let p = draw_indices(self.positive.len(), n_pos, seed, 0);
        let n = draw_indices(self.negative.len(), n_neg, seed, 1);
        Ok((rows(&self.positive, &p), rows(&self.negative, &n)))
    }

    fn cav(&self, layer: usize, n_pos: usize, n_neg: usize, seed: u64, probe: &ProbeConfig) -> Result<Cav> {
        let (pos, neg) = self.sides(n_pos, n_neg, seed)?;
        let cfg = ProbeConfig { seed, ..*probe };
        cav_from_probe(&train_probe(&pos, &neg, &cfg)?, &self.name, layer)
    }
}

/// Trains one CAV at `layer` from `n_pos` concept inputs and `n_neg`
/// negatives. Every token of a positive input is a positive row.
pub fn train_cav(
    model: &Transformer,
    source: &ConceptSource,
    layer: usize,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
    probe: &ProbeConfig,
) -> Result<Cav> {
    Bank::new(model, source, layer)?.cav(layer, n_pos, n_neg, seed, probe)
}

/// One CAV per seed, sharing the activation pass across all of them.
pub fn train_cavs(
    model: &Transformer,
    source: &ConceptSource,
    layer: usize,
    n_pos: usize,
    n_neg: usize,
    seeds: &[u64],
    probe: &ProbeConfig,
) -> Result<Vec<Cav>> {
    check_layer(model, layer)?;
    let bank = Bank::new(model, source, layer)?;
    seeds.par_iter().map(|&s| bank.cav(layer, n_pos, n_neg, s, probe)).collect()
}

/// Concept `target` against the union of the other concepts.
pub fn relative_cav(
    model: &Transformer,
    concepts: &[ConceptSet],
    target: usize,
    layer: usize,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<Cav> {
    train_cav(model, &ConceptSource::Relative { concepts, target }, layer, n_pos, n_neg, seed, &ProbeConfig::default())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcavConfig {
    pub layer: usize,
    pub class: usize,
    pub variant: TcavVariant,
    pub n_cavs: usize,
    pub n_inputs: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub probe: ProbeConfig,
    /// Score only inputs the model assigns to `class`.
    pub only_correct: bool,
    pub seed: u64,
}

impl TcavConfig {
    pub fn new(layer: usize, class: usize) -> Self {
        Self {
            layer,
            class,
            variant: TcavVariant::TTcav,
            n_cavs: DEFAULT_N_CAVS,
            n_inputs: DEFAULT_TCAV_INPUTS,
            n_pos: DEFAULT_CONCEPT_SAMPLES,
            n_neg: DEFAULT_CONCEPT_SAMPLES,
            probe: ProbeConfig::default(),
            only_correct: false,
            seed: 0,
        }
    }
}

/// Scores of one concept under many independently trained CAVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcavSummary {
    pub concept: String,
    pub class: usize,
    pub layer: usize,
    pub variant: TcavVariant,
    pub n_inputs: usize,
    pub scores: Vec<f64>,
    pub probe_accuracies: Vec<f64>,
    pub mean_score: f64,
    pub significance: Significance,
}

impl TcavSummary {
    /// One report per CAV.
    pub fn reports(&self) -> Vec<TcavReport> {
        self.scores
            .iter()
            .map(|&score| TcavReport {
                concept: self.concept.clone(),
                class: self.class,
                layer: self.layer,
                variant: self.variant,
                score,
                n_positive: (score * self.n_inputs as f64).round() as usize,
                n_inputs: self.n_inputs,
            })
            .collect()
    }
}

/// Seed of the `i`-th CAV of an experiment.
pub fn cav_seed(seed: u64, i: usize) -> u64 {
    rng::stream_key(seed, rng::tag::CONCEPT_SAMPLE, i as u64)
}

/// Picks the scored inputs: up to `n` of `inputs`, optionally only those
/// predicted as `class`, sampled by seed when there are more.
pub fn select_inputs(model: &Transformer, inputs: &[SequenceInput], cfg: &TcavConfig) -> Result<Vec<SequenceInput>> {
    let mut pool: Vec<&SequenceInput> = inputs.iter().collect();
    if cfg.only_correct {
        let keep = pool
            .par_iter()
            .map(|x| Ok(model.predict(x)?.label == cfg.class))
            .collect::<Result<Vec<bool>>>()?;
        pool = pool.into_iter().zip(keep).filter(|(_, k)| *k).map(|(x, _)| x).collect();
    }
    if pool.len() > cfg.n_inputs {
        let idx = draw_indices(pool.len(), cfg.n_inputs, cfg.seed, 3);
        pool = idx.into_iter().map(|i| pool[i]).collect();
    }
    if pool.is_empty() {
        return Err(Error::Data("no inputs left to score".into()));
    }
    Ok(pool.into_iter().cloned().collect())
}

/// Trains `n_cavs` CAVs for one concept, scores `inputs` with each and tests
/// the scores against 0.5.
pub fn tcav_experiment(
    model: &Transformer,
    source: &ConceptSource,
    inputs: &[SequenceInput],
    cfg: &TcavConfig,
) -> Result<TcavSummary> {
    check_layer(model, cfg.layer)?;
    if cfg.class >= model.config().n_classes {
        return Err(Error::IndexOutOfRange { index: cfg.class, len: model.config().n_classes });
    }
    let scored = select_inputs(model, inputs, cfg)?;
    let bases = scored
        .par_iter()
        .map(|x| SensitivityBasis::new(model, x, cfg.layer, cfg.class))
        .collect::<Result<Vec<_>>>()?;
    let bank = Bank::new(model, source, cfg.layer)?;
    let results = (0..cfg.n_cavs)
        .into_par_iter()
        .map(|i| {
            let cav = bank.cav(cfg.layer, cfg.n_pos, cfg.n_neg, cav_seed(cfg.seed, i), &cfg.probe)?;
            let (_, score) = score_bases(&bases, &cav.direction, cfg.variant)?;
            Ok((score, cav.accuracy))
        })
        .collect::<Result<Vec<_>>>()?;
    let (scores, probe_accuracies): (Vec<f64>, Vec<f64>) = results.into_iter().unzip();
    let significance = significance_test(&scores)?;
    Ok(TcavSummary {
        concept: bank.name.clone(),
        class: cfg.class,
        layer: cfg.layer,
        variant: cfg.variant,
        n_inputs: bases.len(),
        mean_score: significance.mean,
        scores,
        probe_accuracies,
        significance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model() -> Transformer {
        Transformer::new(ModelConfig { seed: 4, vocab_size: 16, ..ModelConfig::default() }).unwrap()
    }

    fn inputs(start: usize, n: usize) -> Vec<SequenceInput> {
        (0..n).map(|i| SequenceInput::from_tokens(0, 1, &[start + i % 3, 2 + i % 5, start])).collect()
    }

    #[test]
    fn unit_direction_from_probe() {
        let p = Probe { weights: vec![3.0, 4.0], bias: 0.0, accuracy: 1.0 };
        let c = cav_from_probe(&p, "c", 1).unwrap();
        assert_eq!(c.direction, vec![0.6, 0.8]);
        let zero = Probe { weights: vec![0.0, 0.0], bias: 0.0, accuracy: 1.0 };
        assert!(cav_from_probe(&zero, "c", 1).is_err());
    }

    #[test]
    fn swapping_sides_flips_the_direction() {
        let pos = vec![vec![1.0, 0.2], vec![1.2, -0.1], vec![0.9, 0.0], vec![1.1, 0.1]];
        let neg = vec![vec![-1.0, 0.1], vec![-0.8, -0.2], vec![-1.1, 0.0], vec![-0.9, 0.2]];
        let cfg = ProbeConfig { l2: 0.0, seed: 2, ..ProbeConfig::default() };
        let a = train_probe(&pos, &neg, &ProbeConfig { epochs: 300, ..cfg }).unwrap();
        let b = train_probe(&neg, &pos, &ProbeConfig { epochs: 300, ..cfg }).unwrap();
        let ca = cav_from_probe(&a, "a", 1).unwrap();
        let cb = cav_from_probe(&b, "b", 1).unwrap();
        assert!(ca.direction[0] > 0.9 && cb.direction[0] < -0.9);
    }

    #[test]
    fn activations_count_every_token() {
        let m = model();
        let x = inputs(10, 2);
        let rows = collect_activations(&m, &x, 2).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows, collect_activations(&m, &x, 2).unwrap());
        assert!(collect_activations(&m, &x, 0).is_err());
        assert!(collect_activations(&m, &x, 3).is_err());
    }

    #[test]
    fn relative_cav_is_unit_and_seeded() {
        let m = model();
        let concepts = vec![
            ConceptSet { name: "a".into(), inputs: inputs(10, 12) },
            ConceptSet { name: "b".into(), inputs: inputs(13, 12) },
        ];
        let c = relative_cav(&m, &concepts, 0, 2, 8, 8, 7).unwrap();
        let norm: f64 = c.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        assert_eq!(c, relative_cav(&m, &concepts, 0, 2, 8, 8, 7).unwrap());
        assert!(relative_cav(&m, &concepts, 0, 2, 20, 8, 7).is_err());
        assert!(relative_cav(&m, &concepts[..1], 0, 2, 8, 8, 7).is_err());
    }

    #[test]
    fn directional_derivative_along_gradient_is_its_norm() {
        let m = model();
        let x = SequenceInput::from_tokens(0, 1, &[4, 5, 6]);
        let trace = m.forward(&x).unwrap();
        let g = m.hidden_gradient(&trace, 2, 1).unwrap().row(0).to_vec();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cav = Cav { concept: "g".into(), layer: 2, direction: g.iter().map(|v| v / norm).collect(), accuracy: 1.0 };
        assert!((directional_derivative(&m, &x, 2, 1, &cav).unwrap() - norm).abs() < 1e-12);
        let bad = Cav { direction: vec![1.0; 3], ..cav };
        assert!(directional_derivative(&m, &x, 2, 1, &bad).is_err());
    }

    #[test]
    fn aggregate_is_the_token_mean() {
        let m = model();
        let x = SequenceInput::from_tokens(0, 1, &[4, 5, 6, 7]);
        let mut dir = vec![0.0; 16];
        dir[3] = 1.0;
        let cav = Cav { concept: "e3".into(), layer: 1, direction: dir, accuracy: 1.0 };
        let r = token_directional_derivatives(&m, &x, 1, 0, &cav).unwrap();
        let mean = r.per_token.iter().sum::<f64>() / r.per_token.len() as f64;
        assert!((r.aggregate - mean).abs() < 1e-12);
        assert_eq!(r.per_token.len(), 5);
    }

    #[test]
    fn negating_the_cav_complements_strictly() {
        let m = model();
        let xs = inputs(10, 20);
        let mut dir = vec![0.0; 16];
        dir[0] = 0.6;
        dir[5] = -0.8;
        let cav = Cav { concept: "c".into(), layer: 1, direction: dir.clone(), accuracy: 1.0 };
        let neg = Cav { direction: dir.iter().map(|v| -v).collect(), ..cav.clone() };
        let a = tcav_scores(&m, &xs, 1, 1, &cav, TcavVariant::TTcav).unwrap();
        let b = tcav_scores(&m, &xs, 1, 1, &neg, TcavVariant::TTcav).unwrap();
        assert_eq!(a.n_positive + b.n_positive, xs.len());
        assert!(tcav_scores(&m, &[], 1, 1, &cav, TcavVariant::TTcav).is_err());
    }
}
