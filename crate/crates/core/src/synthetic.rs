//! Synthetic tasks with known ground truth.
//!
//! Token ids 0 and 1 are always CLS and MASK.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cav::ConceptSet;
use crate::error::{Error, Result};
use crate::model::{Example, ModelConfig, SequenceInput};
use crate::rng;

pub const CLS: usize = 0;
pub const MASK: usize = 1;

fn stream(seed: u64, kind: u64, index: usize) -> ChaCha8Rng {
    rng::stream(rng::stream_key(seed, rng::tag::SYNTHETIC, kind), rng::tag::SYNTHETIC, index as u64)
}

/// Binary task whose label is set by one planted token: `positive` means
/// class 1 and `negative` class 0. Every other body token is filler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedTokenTask {
    pub vocab_size: usize,
    pub body_len: usize,
}

/// An example together with the sequence position of its planted token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedExample {
    pub example: Example,
    pub planted: usize,
}

impl Default for PlantedTokenTask {
    fn default() -> Self {
        Self { vocab_size: 16, body_len: 10 }
    }
}

impl PlantedTokenTask {
    pub const POSITIVE: usize = 2;
    pub const NEGATIVE: usize = 3;
    const FIRST_FILLER: usize = 4;

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= Self::FIRST_FILLER + 1 || self.body_len == 0 {
            return Err(Error::Config("planted-token task needs at least two filler ids and one body slot".into()));
        }
        Ok(())
    }

    fn filler(&self, r: &mut ChaCha8Rng) -> usize {
        r.random_range(Self::FIRST_FILLER..self.vocab_size)
    }

    /// A small binary classifier sized for this task.
    pub fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig { vocab_size: self.vocab_size, max_len: self.body_len + 1, n_classes: 2, seed, ..ModelConfig::default() }
    }

    /// Sample `index` of the stream for `seed`.
    pub fn sample(&self, seed: u64, index: usize) -> PlantedExample {
        let mut r = stream(seed, 1, index);
        let label = r.random_range(0..2);
        let slot = r.random_range(0..self.body_len);
        let body: Vec<usize> = (0..self.body_len)
            .map(|i| {
                if i == slot {
                    if label == 1 { Self::POSITIVE } else { Self::NEGATIVE }
                } else {
                    self.filler(&mut r)
                }
            })
            .collect();
        PlantedExample { example: Example { input: SequenceInput::from_tokens(CLS, MASK, &body), label }, planted: slot + 1 }
    }

    pub fn dataset(&self, n: usize, seed: u64) -> Vec<PlantedExample> {
        (0..n).map(|i| self.sample(seed, i)).collect()
    }

    /// Training data with masking noise, so that partially masked inputs stay
    /// in distribution. Each filler is masked with probability `mask_rate`,
    /// and a quarter of the examples lose the planted token and get a coin-flip
    /// label, which teaches the model to be undecided without it.
    pub fn training_set(&self, n: usize, seed: u64, mask_rate: f64) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let PlantedExample { example, planted } = self.sample(seed, i);
                let mut r = stream(seed, 2, i);
                let mut body = example.input.token_ids().expect("token input")[1..].to_vec();
                for (j, t) in body.iter_mut().enumerate() {
                    if j + 1 != planted && r.random::<f64>() < mask_rate {
                        *t = MASK;
                    }
                }
                let mut label = example.label;
                if r.random::<f64>() < 0.25 {
                    body[planted - 1] = if r.random::<bool>() { MASK } else { self.filler(&mut r) };
                    label = r.random_range(0..2);
                }
                Example { input: SequenceInput::from_tokens(CLS, MASK, &body), label }
            })
            .collect()
    }
}

/// Binary task over token concepts. Concept 0 decides the label: class 1
/// inputs carry at least one of its tokens, class 0 inputs none. The other
/// concepts appear independently of the label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedConceptTask {
    pub n_concepts: usize,
    pub tokens_per_concept: usize,
    pub n_fillers: usize,
    pub body_len: usize,
}

impl Default for PlantedConceptTask {
    fn default() -> Self {
        Self { n_concepts: 4, tokens_per_concept: 3, n_fillers: 12, body_len: 8 }
    }
}

impl PlantedConceptTask {
    pub fn vocab_size(&self) -> usize {
        2 + self.n_concepts * self.tokens_per_concept + self.n_fillers
    }

    /// A small binary classifier sized for this task.
    pub fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig { vocab_size: self.vocab_size(), max_len: self.body_len + 1, n_classes: 2, seed, ..ModelConfig::default() }
    }

    pub fn concept_tokens(&self, c: usize) -> Vec<usize> {
        let start = 2 + c * self.tokens_per_concept;
        (start..start + self.tokens_per_concept).collect()
    }

    pub fn concept_name(&self, c: usize) -> String {
        if c == 0 {
            "planted".to_string()
        } else {
            format!("distractor-{}", c)
        }
    }

    fn filler(&self, r: &mut ChaCha8Rng) -> usize {
        2 + self.n_concepts * self.tokens_per_concept + r.random_range(0..self.n_fillers)
    }

    fn build(&self, r: &mut ChaCha8Rng, concepts: &[usize]) -> SequenceInput {
        let mut body: Vec<usize> = (0..self.body_len).map(|_| self.filler(r)).collect();
        let mut slots: Vec<usize> = (0..self.body_len).collect();
        slots.shuffle(r);
        let mut free = slots.into_iter();
        for &c in concepts {
            let tokens = self.concept_tokens(c);
            for _ in 0..r.random_range(1..=2) {
                if let Some(s) = free.next() {
                    body[s] = tokens[r.random_range(0..tokens.len())];
                }
            }
        }
        SequenceInput::from_tokens(CLS, MASK, &body)
    }

    pub fn sample(&self, seed: u64, index: usize) -> Example {
        let mut r = stream(seed, 3, index);
        let label = r.random_range(0..2);
        let mut present: Vec<usize> = (1..self.n_concepts).filter(|_| r.random::<bool>()).collect();
        if label == 1 {
            present.push(0);
        }
        Example { input: self.build(&mut r, &present), label }
    }

    pub fn dataset(&self, n: usize, seed: u64) -> Vec<Example> {
        (0..n).map(|i| self.sample(seed, i)).collect()
    }

    /// Inputs carrying only concept `c` among fillers.
    pub fn concept_set(&self, c: usize, n: usize, seed: u64) -> ConceptSet {
        let inputs = (0..n).map(|i| self.build(&mut stream(seed, 4 + c as u64, i), &[c])).collect();
        ConceptSet { name: self.concept_name(c), inputs }
    }

    pub fn concept_sets(&self, n: usize, seed: u64) -> Vec<ConceptSet> {
        (0..self.n_concepts).map(|c| self.concept_set(c, n, seed)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_token_sits_where_reported() {
        let t = PlantedTokenTask::default();
        for e in t.dataset(50, 3) {
            let ids = e.example.input.token_ids().unwrap();
            let want = if e.example.label == 1 { PlantedTokenTask::POSITIVE } else { PlantedTokenTask::NEGATIVE };
            assert_eq!(ids[e.planted], want);
            assert_eq!(ids.iter().filter(|&&i| i == 2 || i == 3).count(), 1);
            assert_eq!(ids.len(), 11);
        }
    }

    #[test]
    fn samples_are_seeded() {
        let t = PlantedTokenTask::default();
        assert_eq!(t.dataset(5, 1), t.dataset(5, 1));
        assert_ne!(t.dataset(5, 1), t.dataset(5, 2));
    }

    #[test]
    fn concept_label_follows_concept_zero() {
        let t = PlantedConceptTask::default();
        let planted = t.concept_tokens(0);
        for e in t.dataset(100, 5) {
            let ids = e.input.token_ids().unwrap();
            assert_eq!(ids.iter().any(|i| planted.contains(i)), e.label == 1);
            assert!(ids.iter().all(|&i| i < t.vocab_size()));
        }
    }

    #[test]
    fn concept_sets_hold_their_concept_only() {
        let t = PlantedConceptTask::default();
        let set = t.concept_set(2, 20, 1);
        let own = t.concept_tokens(2);
        for x in &set.inputs {
            let ids = x.token_ids().unwrap();
            assert!(ids.iter().any(|i| own.contains(i)));
            for c in [0, 1, 3] {
                assert!(!ids.iter().any(|i| t.concept_tokens(c).contains(i)));
            }
        }
    }
}
