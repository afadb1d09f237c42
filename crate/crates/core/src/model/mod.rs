//! Deterministic encoder-only transformer with exact reverse-mode gradients.
//!
//! Block `ℓ` (1-based in the math, 0-based in the API for attention) maps
//! `Z^{ℓ-1}` to `Z^ℓ`; the classification head reads the CLS row of `Z^L`.

mod config;
mod input;
mod params;
mod patch;
mod train;
mod transformer;

pub use config::{ModelConfig, NormPlacement, Positional};
pub use input::{mask_tokens, SequenceInput, Slot};
pub use params::{LayerParams, Params};
pub use patch::{patchify, unpatchify, ImageInput};
pub use train::{evaluate, train, Example, Optimizer, TrainConfig, TrainReport};
pub use transformer::{ForwardTrace, Gradients, Prediction, Transformer};
