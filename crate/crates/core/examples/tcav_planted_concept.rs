//! Concept scores for a planted concept, distractor concepts and a random
//! baseline, with T-TCAV and plain TCAV side by side.
//!
//!   cargo run --release --example tcav_planted_concept

use attnshap::cav::{tcav_experiment, ConceptSource, TcavConfig, TcavVariant};
use attnshap::error::Result;
use attnshap::model::{train, SequenceInput, TrainConfig, Transformer};
use attnshap::synthetic::PlantedConceptTask;

fn main() -> Result<()> {
    let task = PlantedConceptTask::default();
    let mut model = Transformer::new(task.model_config(8))?;
    train(&mut model, &task.dataset(3000, 80), &TrainConfig { epochs: 12, seed: 8, ..Default::default() })?;

    let concepts = task.concept_sets(120, 81);
    let inputs: Vec<SequenceInput> = task.dataset(200, 82).into_iter().map(|e| e.input).collect();
    let pool: Vec<SequenceInput> = task.dataset(240, 83).into_iter().map(|e| e.input).collect();

    for variant in [TcavVariant::TTcav, TcavVariant::Tcav] {
        for layer in 1..=model.config().n_layers {
            let cfg = TcavConfig { variant, n_cavs: 20, seed: 9, ..TcavConfig::new(layer, 1) };
            let mut sources: Vec<ConceptSource> =
                (0..concepts.len()).map(|t| ConceptSource::Relative { concepts: &concepts, target: t }).collect();
            sources.push(ConceptSource::Random { name: "random".into(), pool: &pool });
            for source in &sources {
                let s = tcav_experiment(&model, source, &inputs, &cfg)?;
                println!(
                    "{:<7} layer {}  {:<13} score {:.3}  p {:.2e}{}",
                    variant.name(),
                    layer,
                    s.concept,
                    s.mean_score,
                    s.significance.p_value,
                    if s.significance.reject { "  significant" } else { "" }
                );
            }
        }
    }
    Ok(())
}
