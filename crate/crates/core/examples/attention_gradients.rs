//! Attention maps, their gradients and the gradient-weighted contribution
//! matrix for one input.
//!
//!   cargo run --release --example attention_gradients

use attnshap::error::Result;
use attnshap::model::{ModelConfig, SequenceInput, Transformer};
use attnshap::tensor::{average_attention, contribution_matrix};

fn print_row(label: &str, row: &[f64]) {
    let cells: Vec<String> = row.iter().map(|v| format!("{:+.4}", v)).collect();
    println!("{:<14}{}", label, cells.join(" "));
}

fn main() -> Result<()> {
    let model = Transformer::new(ModelConfig { n_layers: 3, n_heads: 4, seed: 11, ..ModelConfig::default() })?;
    let x = SequenceInput::from_tokens(0, 1, &[5, 9, 12, 7, 20, 3]);
    let trace = model.forward(&x)?;
    let class = trace.predicted_class();
    println!("logits {:?}, explaining class {}", trace.logits, class);

    let grads = model.attention_gradients(&trace, class)?;
    for l in 0..model.config().n_layers {
        print_row(&format!("A[{}][0] CLS", l), trace.attention.get(l, 0).row(0));
        print_row(&format!("dA[{}][0] CLS", l), grads.get(l, 0).row(0));
    }

    print_row("mean attn CLS", average_attention(&trace.attention).row(0));
    let c = contribution_matrix(&trace.attention, &grads, class)?;
    print_row("grad x attn", c.row(0));
    Ok(())
}
