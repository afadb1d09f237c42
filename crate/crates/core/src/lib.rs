//! Attention-driven explanations for transformer encoders.
//!
//! The crate bundles a small deterministic transformer with exact attention
//! gradients, Shapley attributions over attention-derived cooperative games,
//! token-level attention-weighted concept sensitivity (T-TCAV), faithfulness
//! metrics, and the file formats and command-line runner around them.

pub mod cav;
pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod shapley;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
