//! Dumps attention and gradient stacks to disk, reads them back and runs the
//! trace-based methods on the loaded stacks alone.
//!
//!   cargo run --release --example tensor_dump

use attnshap::error::Result;
use attnshap::io;
use attnshap::model::{ModelConfig, SequenceInput, Transformer};
use attnshap::shapley::{attribute, attribute_stacks, AttributeOptions, Method, StackInput};

fn main() -> Result<()> {
    let dir = std::env::temp_dir().join(format!("attnshap-dump-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let model = Transformer::new(ModelConfig { seed: 21, ..ModelConfig::default() })?;
    let x = SequenceInput::from_tokens(0, 1, &[4, 8, 15, 16, 23, 31]);
    let trace = model.forward(&x)?;
    let class = trace.predicted_class();
    let grads = model.attention_gradients(&trace, class)?;

    let hash = io::config_hash(model.config())?;
    io::dump_attention(&dir.join("attn.bin"), &trace.attention, &hash)?;
    io::dump_gradients(&dir.join("grad.bin"), &grads, class, &hash)?;
    let attention = io::load_attention(&dir.join("attn.bin"))?;
    let gradients = io::load_gradients(&dir.join("grad.bin"))?;
    println!("round trip exact: {}", attention == trace.attention);

    let players = x.original_indices();
    let input = StackInput { attention: &attention, gradients: Some(&gradients), players: &players, cls: 0 };
    let opts = AttributeOptions { seed: 5, ..Default::default() };
    for method in Method::ALL.into_iter().filter(|m| !m.needs_model()) {
        let from_disk = attribute_stacks(method, &input, class, &opts)?;
        let live = attribute(method, &model, &x, class, &opts)?;
        let same = from_disk.scores == live.scores;
        println!("{:<38} {:?} same as live: {}", method.name(), round(&from_disk.scores), same);
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
