//! Shapley values of small cooperative games, exact and sampled.
//!
//!   cargo run --release --example shapley_games

use attnshap::error::Result;
use attnshap::shapley::{
    closed_form_mutual, exact_shapley, sampled_shapley, CharacteristicKind, CharacteristicSpec, FnGame, PairReading,
    SamplingScheme,
};
use attnshap::tensor::Matrix;

fn main() -> Result<()> {
    // Glove game: players 0 and 1 own left gloves, 2 owns a right glove.
    let glove = FnGame {
        n: 3,
        f: |s: &[usize]| {
            let left = s.iter().filter(|&&p| p < 2).count();
            let right = s.iter().filter(|&&p| p == 2).count();
            left.min(right) as f64
        },
    };
    println!("glove game: {:?}", exact_shapley(&glove, 20)?);

    // A contribution matrix over CLS plus 7 tokens.
    let n = 8;
    let m = Matrix::from_fn(n, n, |i, j| ((3 * i + 5 * j) % 11) as f64 / 11.0 - 0.2);
    let players: Vec<usize> = (1..n).collect();
    let spec = CharacteristicSpec::from_contribution(CharacteristicKind::GradAttMutual, m.clone(), players.clone(), 0)?;
    let exact = exact_shapley(&spec, 20)?;
    let closed = closed_form_mutual(&m, &players, PairReading::Unordered);
    println!("\nmutual game, exact vs closed form");
    for (p, (e, c)) in players.iter().zip(exact.iter().zip(&closed)) {
        println!("  token {}  {:+.6}  {:+.6}", p, e, c);
    }

    let max = CharacteristicSpec::from_contribution(CharacteristicKind::GradAttMaxMutual, m, players, 0)?;
    let truth = exact_shapley(&max, 20)?;
    println!("\nmax-mutual game, mean absolute error of sampled estimates");
    for samples in [20, 100, 500] {
        let mc = sampled_shapley(&max, &SamplingScheme::monte_carlo(samples, 1))?;
        let kernel = sampled_shapley(&max, &SamplingScheme::kernel(samples, 1))?;
        let mae = |v: &[f64]| v.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / truth.len() as f64;
        println!("  {:>4} coalitions  monte carlo {:.2e}  kernel {:.2e}", samples, mae(&mc), mae(&kernel));
    }
    Ok(())
}
