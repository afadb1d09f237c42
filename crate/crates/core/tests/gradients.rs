//! Reverse-mode gradients against central finite differences.

mod common;

use attnshap::model::NormPlacement;
use common::*;

#[test]
fn attention_gradients_match_finite_differences() {
    for seed in 0..6 {
        for (norm, pooler) in [(NormPlacement::Post, true), (NormPlacement::Pre, false)] {
            let m = model(seed, norm, pooler);
            let err = check_attention(&m, &input(seed), (seed % 3) as usize);
            assert!(err < TOL, "seed {} {:?}: relative error {}", seed, norm, err);
        }
    }
}

#[test]
fn hidden_gradients_match_finite_differences() {
    for seed in 0..6 {
        for (norm, pooler) in [(NormPlacement::Post, true), (NormPlacement::Pre, true)] {
            let m = model(seed, norm, pooler);
            let err = check_hidden(&m, &input(seed), (seed % 3) as usize);
            assert!(err < TOL, "seed {} {:?}: relative error {}", seed, norm, err);
        }
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    for (seed, norm) in [(11, NormPlacement::Post), (12, NormPlacement::Pre)] {
        let m = model(seed, norm, true);
        let x = input(seed);
        let class = 1;
        let trace = m.forward(&x).unwrap();
        let mut dl = vec![0.0; 3];
        dl[class] = 1.0;
        let analytic = m.backward(&trace, &dl, true).unwrap().params.unwrap().flatten();
        let base = m.params().flatten();
        // Every 7th parameter keeps the test quick while touching every tensor.
        for idx in (0..base.len()).step_by(7) {
            let eval = |delta: f64| {
                let mut mm = m.clone();
                let mut p = base.clone();
                p[idx] += delta;
                mm.params_mut().assign_flat(&p).unwrap();
                mm.forward(&x).unwrap().logits[class]
            };
            let fd = (eval(EPS) - eval(-EPS)) / (2.0 * EPS);
            let err = rel_err(analytic[idx], fd);
            assert!(err < TOL, "param {} analytic {} fd {} err {}", idx, analytic[idx], fd, err);
        }
    }
}
