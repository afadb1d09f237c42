use super::game::PairReading;
use crate::tensor::Matrix;

/// Shapley values of the CLS game: each player's marginal contribution is
/// constant, so `φ_i` is its CLS-row entry.
pub fn closed_form_cls(m: &Matrix, cls: usize, players: &[usize]) -> Vec<f64> {
    players.iter().map(|&p| m.get(cls, p)).collect()
}

/// Shapley values of the mutual game in `O(N²)`.
///
/// Splits the sum over coalitions by the size of the coalition joined:
/// the empty set pays `M_ii`, a singleton `{j}` pays `M_ij + M_ji - M_jj`,
/// and larger sets pay `M_ij + M_ji` per member. For the larger sets the
/// positional weights reduce to `1/2 - 1/(N(N-1))`.
pub fn closed_form_mutual(m: &Matrix, players: &[usize], reading: PairReading) -> Vec<f64> {
    let n = players.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![m.get(players[0], players[0])];
    }
    let nf = n as f64;
    let pair = 1.0 / (nf * (nf - 1.0));
    let big = 0.5 - pair;
    let mult = reading.multiplicity();
    players
        .iter()
        .map(|&i| {
            let mut phi = m.get(i, i) / nf;
            for &j in players.iter().filter(|&&j| j != i) {
                let sym = mult * (m.get(i, j) + m.get(j, i));
                phi += pair * (sym - m.get(j, j)) + big * sym;
            }
            phi
        })
        .collect()
}
