use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::exact::{exact_shapley, DEFAULT_EXACT_LIMIT};
use super::game::Game;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Exact,
    #[default]
    MonteCarlo,
    Kernel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingScheme {
    pub mode: SamplingMode,
    /// Number of coalitions, counting the forced empty and grand coalitions.
    pub n_samples: usize,
    pub seed: u64,
    /// Draw distinct coalitions only.
    #[serde(default)]
    pub dedup: bool,
}

impl SamplingScheme {
    pub const DEFAULT_SAMPLES: usize = 100;

    pub fn monte_carlo(n_samples: usize, seed: u64) -> Self {
        Self { mode: SamplingMode::MonteCarlo, n_samples, seed, dedup: false }
    }

    pub fn kernel(n_samples: usize, seed: u64) -> Self {
        Self { mode: SamplingMode::Kernel, n_samples, seed, dedup: false }
    }

    pub fn exact() -> Self {
        Self { mode: SamplingMode::Exact, n_samples: 0, seed: 0, dedup: false }
    }

    pub fn deduplicated(mut self) -> Self {
        self.dedup = true;
        self
    }
}

impl Default for SamplingScheme {
    fn default() -> Self {
        Self::monte_carlo(Self::DEFAULT_SAMPLES, 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelWeight {
    /// Infinite weight: the coalition is always part of the sample.
    AlwaysInclude,
    Finite(f64),
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `(N-1) / (C(N,s) s (N-s))`.
pub fn kernel_weight(n: usize, s: usize) -> Result<KernelWeight> {
    if s > n {
        return Err(Error::InvalidInput(format!("coalition size {} exceeds {} players", s, n)));
    }
    if s == 0 || s == n {
        return Ok(KernelWeight::AlwaysInclude);
    }
    Ok(KernelWeight::Finite((n - 1) as f64 / (binomial(n, s) * (s * (n - s)) as f64)))
}

/// Coalition as a bit set over player slots.
type Bits = Vec<u64>;

fn empty_bits(n: usize) -> Bits {
    vec![0; n.div_ceil(64).max(1)]
}

fn has(b: &Bits, i: usize) -> bool {
    b[i / 64] >> (i % 64) & 1 == 1
}

fn toggle(b: &mut Bits, i: usize) {
    b[i / 64] ^= 1 << (i % 64);
}

fn bits_of(members: &[usize], n: usize) -> Bits {
    let mut b = empty_bits(n);
    for &i in members {
        toggle(&mut b, i);
    }
    b
}

fn members(b: &Bits, n: usize) -> Vec<usize> {
    (0..n).filter(|&i| has(b, i)).collect()
}

fn size(b: &Bits) -> usize {
    b.iter().map(|w| w.count_ones() as usize).sum()
}

/// Cumulative distribution of coalition sizes `1..n` under the kernel,
/// i.e. proportional to `C(n,s) k(n,s) = (n-1)/(s(n-s))`.
fn kernel_size_cdf(n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..n).map(|s| 1.0 / (s * (n - s)) as f64).collect();
    let total: f64 = raw.iter().sum();
    let mut acc = 0.0;
    raw.iter()
        .map(|r| {
            acc += r / total;
            acc
        })
        .collect()
}

fn draw(n: usize, mode: SamplingMode, cdf: &[f64], seed: u64, index: usize) -> Bits {
    let mut r = rng::stream(seed, rng::tag::COALITION, index as u64);
    match mode {
        SamplingMode::Kernel => {
            let u: f64 = r.random();
            let s = 1 + cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1);
            let chosen = rand::seq::index::sample(&mut r, n, s);
            bits_of(&chosen.into_vec(), n)
        }
        _ => {
            let picked: Vec<usize> = (0..n).filter(|_| r.random::<bool>()).collect();
            bits_of(&picked, n)
        }
    }
}

/// The sampled coalitions, including the forced empty and grand coalitions.
pub fn draw_coalitions(n: usize, scheme: &SamplingScheme) -> Result<Vec<Vec<usize>>> {
    Ok(draw_bits(n, scheme)?.iter().map(|b| members(b, n)).collect())
}

fn draw_bits(n: usize, scheme: &SamplingScheme) -> Result<Vec<Bits>> {
    if scheme.mode == SamplingMode::Exact {
        return Err(Error::InvalidInput("exact scheme does not sample".into()));
    }
    if scheme.n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    let empty = empty_bits(n);
    let mut grand = empty.clone();
    for i in 0..n {
        toggle(&mut grand, i);
    }
    let mut out = vec![empty];
    if n == 0 {
        return Ok(out);
    }
    out.push(grand);
    let cdf = if n > 1 { kernel_size_cdf(n) } else { Vec::new() };
    // The kernel never draws empty or grand coalitions; with one player
    // those are all there is.
    if scheme.mode == SamplingMode::Kernel && n == 1 {
        return Ok(out);
    }
    if scheme.dedup {
        let space = if n < 62 { 1usize << n } else { usize::MAX };
        let target = scheme.n_samples.max(2).min(space);
        let mut seen: BTreeSet<Bits> = out.iter().cloned().collect();
        let mut index = 0usize;
        let max_draws = target.saturating_mul(1000).max(100_000);
        while seen.len() < target && index < max_draws {
            let b = draw(n, scheme.mode, &cdf, scheme.seed, index);
            index += 1;
            if seen.insert(b.clone()) {
                out.push(b);
            }
        }
    } else {
        let draws = scheme.n_samples.saturating_sub(2);
        let extra: Vec<Bits> = (0..draws)
            .into_par_iter()
            .map(|i| draw(n, scheme.mode, &cdf, scheme.seed, i))
            .collect();
        out.extend(extra);
    }
    Ok(out)
}

/// Sampled Shapley estimate.
///
/// Every sampled coalition `S` gives one marginal contribution per player:
/// `v(S ∪ {i}) - v(S)` when `i ∉ S` and `v(S) - v(S \ {i})` otherwise. The
/// marginals are grouped by the size of the coalition joined; each size class
/// carries total Shapley weight `1/N`, so the estimate is the mean over the
/// observed size classes of the within-class means. When every coalition is
/// present this is the exact value.
pub fn sampled_shapley<G: Game + ?Sized>(game: &G, scheme: &SamplingScheme) -> Result<Vec<f64>> {
    let n = game.n_players();
    if scheme.mode == SamplingMode::Exact {
        return exact_shapley(game, DEFAULT_EXACT_LIMIT);
    }
    let sample = draw_bits(n, scheme)?;
    if n == 0 {
        return Ok(Vec::new());
    }

    // Every coalition whose value is needed, evaluated once.
    let mut needed: BTreeSet<Bits> = BTreeSet::new();
    for b in &sample {
        needed.insert(b.clone());
        for i in 0..n {
            let mut nb = b.clone();
            toggle(&mut nb, i);
            needed.insert(nb);
        }
    }
    let needed: Vec<Bits> = needed.into_iter().collect();
    let values: Vec<f64> = needed.par_iter().map(|b| game.value(&members(b, n))).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite characteristic value while sampling".into()));
    }
    let table: BTreeMap<&Bits, f64> = needed.iter().zip(values).collect();

    let phi = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sums = vec![0.0; n];
            let mut counts = vec![0usize; n];
            for b in &sample {
                let mut other = b.clone();
                toggle(&mut other, i);
                let (with, without) = if has(b, i) { (b, &other) } else { (&other, b) };
                let s = size(without);
                sums[s] += table[with] - table[without];
                counts[s] += 1;
            }
            let (total, strata) = sums
                .iter()
                .zip(&counts)
                .filter(|(_, &c)| c > 0)
                .fold((0.0, 0usize), |(t, k), (s, &c)| (t + s / c as f64, k + 1));
            total / strata as f64
        })
        .collect();
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::game::FnGame;

    #[test]
    fn kernel_weight_spot_value() {
        assert_eq!(kernel_weight(4, 2).unwrap(), KernelWeight::Finite(0.125));
    }

    #[test]
    fn kernel_weight_ends_are_always_included() {
        assert_eq!(kernel_weight(5, 0).unwrap(), KernelWeight::AlwaysInclude);
        assert_eq!(kernel_weight(5, 5).unwrap(), KernelWeight::AlwaysInclude);
        assert!(kernel_weight(5, 6).is_err());
    }

    #[test]
    fn kernel_weight_is_symmetric() {
        for n in 2..=16 {
            for s in 1..n {
                match (kernel_weight(n, s).unwrap(), kernel_weight(n, n - s).unwrap()) {
                    (KernelWeight::Finite(a), KernelWeight::Finite(b)) => assert!((a - b).abs() <= 1e-15 * a),
                    _ => panic!(),
                }
            }
        }
    }

    #[test]
    fn forced_coalitions_lead_the_sample() {
        for mode in [SamplingMode::MonteCarlo, SamplingMode::Kernel] {
            let scheme = SamplingScheme { mode, n_samples: 10, seed: 3, dedup: false };
            let c = draw_coalitions(7, &scheme).unwrap();
            assert_eq!(c.len(), 10);
            assert!(c[0].is_empty());
            assert_eq!(c[1], (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn kernel_draws_are_proper_subsets() {
        let c = draw_coalitions(6, &SamplingScheme::kernel(500, 1)).unwrap();
        assert!(c[2..].iter().all(|s| !s.is_empty() && s.len() < 6));
    }

    #[test]
    fn zero_samples_is_an_error() {
        let g = FnGame { n: 3, f: |s: &[usize]| s.len() as f64 };
        assert!(sampled_shapley(&g, &SamplingScheme::monte_carlo(0, 0)).is_err());
    }

    #[test]
    fn same_seed_same_estimate() {
        let g = FnGame { n: 8, f: |s: &[usize]| s.iter().map(|&i| (i as f64).sin()).sum::<f64>().powi(2) };
        let a = sampled_shapley(&g, &SamplingScheme::monte_carlo(50, 9)).unwrap();
        let b = sampled_shapley(&g, &SamplingScheme::monte_carlo(50, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn additive_game_is_recovered_from_any_sample() {
        let g = FnGame { n: 9, f: |s: &[usize]| s.iter().map(|&i| i as f64 * 0.5).sum() };
        for mode in [SamplingMode::MonteCarlo, SamplingMode::Kernel] {
            let phi = sampled_shapley(&g, &SamplingScheme { mode, n_samples: 5, seed: 2, dedup: false }).unwrap();
            for (i, p) in phi.iter().enumerate() {
                assert!((p - i as f64 * 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exhaustive_dedup_matches_enumeration() {
        let g = FnGame { n: 6, f: |s: &[usize]| s.iter().map(|&i| (i + 1) as f64).product::<f64>().sqrt() };
        let exact = exact_shapley(&g, 20).unwrap();
        for mode in [SamplingMode::MonteCarlo, SamplingMode::Kernel] {
            let scheme = SamplingScheme { mode, n_samples: 1 << 6, seed: 4, dedup: true };
            let phi = sampled_shapley(&g, &scheme).unwrap();
            for (a, b) in phi.iter().zip(&exact) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
