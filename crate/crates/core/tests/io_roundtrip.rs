//! Serialization round trips and corruption handling.

mod common;

use attnshap::cav::Cav;
use attnshap::error::Error;
use attnshap::io::{self, container, DatasetRecord, LoadedStack, StoredCav};
use attnshap::model::NormPlacement;
use attnshap::shapley::{attribute, AttributeOptions, AttributionResult, Method};
use proptest::prelude::*;

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn stacks_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::model(3, NormPlacement::Post, true);
    let x = common::input(3);
    let trace = m.forward(&x).unwrap();
    let grads = m.attention_gradients(&trace, 2).unwrap();
    let (a, g) = (dir.path().join("a.bin"), dir.path().join("g.bin"));
    io::dump_attention(&a, &trace.attention, "h").unwrap();
    io::dump_gradients(&g, &grads, 2, "h").unwrap();
    assert_eq!(io::load_attention(&a).unwrap(), trace.attention);
    match io::load_stack(&g).unwrap() {
        LoadedStack::Gradient { class, stack } => {
            assert_eq!(class, Some(2));
            for (x, y) in stack.matrices().iter().zip(grads.matrices()) {
                assert_eq!(bits(x.data()), bits(y.data()));
            }
        }
        other => panic!("expected gradients, got {:?}", other),
    }
    assert!(io::load_gradients(&a).is_err());
}

#[test]
fn truncated_stack_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::model(4, NormPlacement::Pre, true);
    let trace = m.forward(&common::input(4)).unwrap();
    let path = dir.path().join("a.bin");
    io::dump_attention(&path, &trace.attention, "h").unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(io::load_attention(&path), Err(Error::Corrupt(_))));
}

#[test]
fn header_size_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.bin");
    let header = serde_json::json!({"L": 1, "H": 1, "N": 3, "kind": "attention", "config_hash": "h"});
    container::write(&path, &header, &[0.25; 4]).unwrap();
    assert!(matches!(io::load_attention(&path), Err(Error::Corrupt(_))));
}

#[test]
fn checkpoint_restores_identical_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = common::model(5, NormPlacement::Pre, false);
    io::save_checkpoint(&path, &m, "h").unwrap();
    let back = io::load_checkpoint(&path).unwrap();
    assert_eq!(back.config(), m.config());
    assert_eq!(bits(&back.params().flatten()), bits(&m.params().flatten()));
    let x = common::input(5);
    assert_eq!(bits(&back.forward(&x).unwrap().logits), bits(&m.forward(&x).unwrap().logits));
}

#[test]
fn cavs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    let cavs: Vec<StoredCav> = (0..3)
        .map(|i| StoredCav {
            cav: Cav {
                concept: format!("c{}", i),
                layer: 1 + i,
                direction: vec![0.6, -0.8, 0.0, 1e-310 * i as f64],
                accuracy: 0.5 + 0.1 * i as f64,
            },
            seed: (i != 1).then_some(i as u64 * 7),
        })
        .collect();
    io::save_cavs(&path, &cavs, "h").unwrap();
    assert_eq!(io::load_cavs(&path).unwrap(), cavs);
}

#[test]
fn attribution_json_round_trips() {
    let m = common::model(6, NormPlacement::Post, true);
    let r = attribute(Method::Shap, &m, &common::input(6), 1, &AttributeOptions { seed: 9, ..Default::default() }).unwrap();
    let text = serde_json::to_string(&r).unwrap();
    let back: AttributionResult = serde_json::from_str(&text).unwrap();
    assert_eq!(bits(&back.scores), bits(&r.scores));
    assert_eq!((back.method, back.seed, back.n_samples, back.base_value), (r.method, r.seed, r.n_samples, r.base_value));
    assert_eq!(back.player_indices, r.player_indices);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn datasets_round_trip(rows in prop::collection::vec((prop::collection::vec(0usize..50, 0..12), 0usize..4), 0..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let records: Vec<DatasetRecord> =
            rows.into_iter().enumerate().map(|(i, (ids, label))| DatasetRecord::tokens(format!("r{}", i), label, ids)).collect();
        io::save_dataset(&path, &records).unwrap();
        let back = io::load_dataset(&path).unwrap();
        prop_assert_eq!(back.records, records);
    }

    #[test]
    fn container_round_trips_any_floats(blob in prop::collection::vec(any::<f64>(), 0..64)) {
        let bytes = container::encode(&serde_json::json!({"k": 1}), &blob).unwrap();
        let (_, back): (serde_json::Value, Vec<f64>) = container::decode(&bytes).unwrap();
        prop_assert_eq!(bits(&back), bits(&blob));
    }
}
