//! Trains a classifier whose label is set by one planted token and checks
//! where each method ranks that token.
//!
//!   cargo run --release --example attribute_planted

use attnshap::error::Result;
use attnshap::model::{train, TrainConfig, Transformer};
use attnshap::shapley::{attribute, AttributeOptions, Method};
use attnshap::synthetic::PlantedTokenTask;

fn main() -> Result<()> {
    let task = PlantedTokenTask::default();
    let mut model = Transformer::new(task.model_config(7))?;
    let report = train(&mut model, &task.training_set(3000, 70, 0.3), &TrainConfig { epochs: 12, seed: 7, ..Default::default() })?;
    println!("trained: loss {:.4}", report.final_loss);

    let opts = AttributeOptions { seed: 1, ..Default::default() };
    let test = task.dataset(50, 71);
    println!("{:<40} mean rank of planted token (1 = top)", "method");
    for method in Method::ALL {
        let mut rank_sum = 0.0;
        for s in &test {
            let x = &s.example.input;
            let class = model.predict(x)?.label;
            let r = attribute(method, &model, x, class, &opts)?;
            let planted = r.score_of(s.planted).unwrap();
            rank_sum += 1.0 + r.scores.iter().filter(|&&v| v > planted).count() as f64;
        }
        println!("{:<40} {:.2}", method.name(), rank_sum / test.len() as f64);
    }
    Ok(())
}
