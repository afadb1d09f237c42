//! Training behaviour of the toy transformer.

use attnshap::model::{evaluate, train, Optimizer, TrainConfig, Transformer};
use attnshap::synthetic::PlantedTokenTask;

#[test]
fn full_batch_descent_never_increases_the_loss() {
    let task = PlantedTokenTask::default();
    let data: Vec<_> = task.dataset(64, 3).into_iter().map(|p| p.example).collect();
    let mut model = Transformer::new(task.model_config(3)).unwrap();
    let cfg = TrainConfig { epochs: 15, lr: 0.05, batch_size: data.len(), seed: 3, optimizer: Optimizer::Sgd };
    let report = train(&mut model, &data, &cfg).unwrap();
    for w in report.epoch_losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "loss rose: {:?}", report.epoch_losses);
    }
    let (loss, _) = evaluate(&model, &data).unwrap();
    assert!(loss <= report.epoch_losses[0]);
}

#[test]
fn adam_learns_the_planted_token() {
    let task = PlantedTokenTask::default();
    let mut model = Transformer::new(task.model_config(4)).unwrap();
    let cfg = TrainConfig { epochs: 6, seed: 4, ..TrainConfig::default() };
    train(&mut model, &task.training_set(1500, 40, 0.3), &cfg).unwrap();
    let clean: Vec<_> = task.dataset(200, 41).into_iter().map(|p| p.example).collect();
    let (_, acc) = evaluate(&model, &clean).unwrap();
    assert!(acc > 0.95, "accuracy {}", acc);
}

#[test]
fn same_seed_same_weights() {
    let task = PlantedTokenTask::default();
    let data = task.training_set(100, 5, 0.3);
    let cfg = TrainConfig { epochs: 2, seed: 5, ..TrainConfig::default() };
    let run = || {
        let mut m = Transformer::new(task.model_config(5)).unwrap();
        train(&mut m, &data, &cfg).unwrap();
        m.params().flatten()
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
