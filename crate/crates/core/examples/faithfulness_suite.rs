//! F1, comprehensiveness and sufficiency for every method on the
//! planted-token task.
//!
//!   cargo run --release --example faithfulness_suite

use attnshap::error::Result;
use attnshap::metrics::{evaluate_suite, MetricConfig};
use attnshap::model::{train, Example, TrainConfig, Transformer};
use attnshap::shapley::{AttributeOptions, Method};
use attnshap::synthetic::PlantedTokenTask;

fn main() -> Result<()> {
    let task = PlantedTokenTask::default();
    let mut model = Transformer::new(task.model_config(2))?;
    train(&mut model, &task.training_set(3000, 20, 0.3), &TrainConfig { epochs: 12, seed: 2, ..Default::default() })?;
    let data: Vec<Example> = task.dataset(100, 21).into_iter().map(|p| p.example).collect();

    let cfg = MetricConfig::default();
    let opts = AttributeOptions { seed: 3, ..Default::default() };
    println!("{:<38} {:>6} {:>16} {:>16}", "method", "F1", "comp", "suff");
    for (method, row) in evaluate_suite(&model, &data, "planted", &Method::ALL, &cfg, &opts)? {
        match row {
            Ok(r) => println!(
                "{:<38} {:>6.3} {:>8.4} ±{:.4} {:>8.4} ±{:.4}",
                method.name(),
                r.f1,
                r.comprehensiveness,
                r.comp_ci,
                r.sufficiency,
                r.suff_ci
            ),
            Err(e) => println!("{:<38} failed: {}", method.name(), e),
        }
    }
    Ok(())
}
