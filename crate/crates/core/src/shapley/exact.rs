use rayon::prelude::*;

use super::game::Game;
use crate::error::{Error, Result};

/// Largest player count enumerated by default.
pub const DEFAULT_EXACT_LIMIT: usize = 20;

/// `s!(n-s-1)!/n!` for `s = 0..n`.
pub fn shapley_weights(n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    // 1 / (n * C(n-1, s)), with C built incrementally.
    let mut out = Vec::with_capacity(n);
    let mut binom = 1.0f64;
    for s in 0..n {
        out.push(1.0 / (n as f64 * binom));
        binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
    }
    out
}

pub(crate) fn members_of(mask: u64, n: usize) -> Vec<usize> {
    (0..n).filter(|&i| mask >> i & 1 == 1).collect()
}

/// Value of every coalition, indexed by bit mask.
pub fn coalition_values<G: Game + ?Sized>(game: &G, limit: usize) -> Result<Vec<f64>> {
    let n = game.n_players();
    if n > limit || n >= 63 {
        return Err(Error::TooManyPlayers { players: n, limit: limit.min(62) });
    }
    let values: Vec<f64> = (0..1usize << n)
        .into_par_iter()
        .with_min_len(256)
        .map(|mask| game.value(&members_of(mask as u64, n)))
        .collect();
    if let Some(mask) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite characteristic value for coalition mask {:#x}", mask)));
    }
    Ok(values)
}

/// Shapley values by full enumeration.
pub fn exact_shapley<G: Game + ?Sized>(game: &G, limit: usize) -> Result<Vec<f64>> {
    let n = game.n_players();
    let values = coalition_values(game, limit)?;
    Ok(shapley_from_values(&values, n))
}

/// Shapley values from a complete table of coalition values.
pub fn shapley_from_values(values: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(values.len(), 1usize << n, "value table size");
    let w = shapley_weights(n);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let bit = 1u64 << i;
            let mut phi = 0.0;
            for mask in 0..1u64 << n {
                if mask & bit == 0 {
                    let s = mask.count_ones() as usize;
                    phi += w[s] * (values[(mask | bit) as usize] - values[mask as usize]);
                }
            }
            phi
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::game::FnGame;

    #[test]
    fn weights_sum_to_one_over_sizes() {
        for n in 1..15 {
            let w = shapley_weights(n);
            // Each size s has C(n-1, s) coalitions.
            let mut binom = 1.0;
            let mut total = 0.0;
            for (s, ws) in w.iter().enumerate() {
                total += ws * binom;
                binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
            }
            assert!((total - 1.0).abs() < 1e-12, "n={} total={}", n, total);
        }
    }

    #[test]
    fn two_player_mutual_by_hand() {
        // M = [[1,2],[3,4]], unordered pairs.
        let g = FnGame {
            n: 2,
            f: |s: &[usize]| match s {
                [] => 0.0,
                [0] => 1.0,
                [1] => 4.0,
                _ => 5.0,
            },
        };
        let phi = exact_shapley(&g, 20).unwrap();
        assert!((phi[0] - 1.0).abs() < 1e-12 && (phi[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_game_splits_evenly() {
        let g = FnGame { n: 6, f: |s: &[usize]| (s.len() as f64).powi(2) };
        let phi = exact_shapley(&g, 20).unwrap();
        for p in &phi {
            assert!((p - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn null_player_gets_zero() {
        let g = FnGame { n: 5, f: |s: &[usize]| s.iter().filter(|&&i| i != 3).map(|&i| i as f64).product::<f64>() };
        let phi = exact_shapley(&g, 20).unwrap();
        assert!(phi[3].abs() < 1e-12);
    }

    #[test]
    fn limit_is_enforced() {
        let g = FnGame { n: 5, f: |_: &[usize]| 0.0 };
        assert!(matches!(exact_shapley(&g, 4), Err(Error::TooManyPlayers { players: 5, limit: 4 })));
    }

    #[test]
    fn non_finite_values_are_reported() {
        let g = FnGame { n: 2, f: |s: &[usize]| if s.len() == 2 { f64::NAN } else { 0.0 } };
        assert!(matches!(exact_shapley(&g, 20), Err(Error::Numeric(_))));
    }
}
