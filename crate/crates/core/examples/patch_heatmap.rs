//! Patchifies a small image, attributes the patches and writes a grid heatmap.
//!
//!   cargo run --release --example patch_heatmap -- [output.ppm]

use std::path::PathBuf;

use attnshap::error::Result;
use attnshap::io::heatmap::{emit_attribution, Layout};
use attnshap::model::{patchify, ImageInput, ModelConfig, SequenceInput, Transformer};
use attnshap::shapley::{attribute, AttributeOptions, Method};

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("patches.ppm"));
    let (h, w, c, p) = (8, 8, 3, 2);
    let pixels: Vec<f64> = (0..h * w * c).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
    let img = ImageInput::new(h, w, c, pixels, p)?;
    let (rows, cols) = img.grid();

    let cfg = ModelConfig { patch_dim: Some(img.patch_len()), max_len: img.n_patches() + 1, seed: 4, ..ModelConfig::default() };
    let model = Transformer::new(cfg)?;
    let x = SequenceInput::from_patches(0, 1, patchify(&img)?);
    let class = model.predict(&x)?.label;
    let r = attribute(Method::ShapleyGradAttCls, &model, &x, class, &AttributeOptions::default())?;

    let image = emit_attribution(&out, &r, Layout::Grid { rows, cols, cell_px: 12 }, "example")?;
    println!("{}x{} patch grid -> {}x{} pixels at {}", rows, cols, image.width, image.height, out.display());
    for row in r.scores.chunks(cols) {
        println!("  {}", row.iter().map(|v| format!("{:+.4}", v)).collect::<Vec<_>>().join(" "));
    }
    Ok(())
}
