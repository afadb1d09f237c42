//! Files on disk: datasets, tensor dumps, checkpoints, CAVs, reports and heatmaps.
//!
//! Dense tensors use one container: an 8-byte little-endian header length,
//! a JSON header, then the payload as little-endian `f64`.

pub mod cavs;
pub mod checkpoint;
pub mod container;
pub mod dataset;
pub mod heatmap;
pub mod reports;
pub mod stacks;

pub use cavs::{load_cavs, save_cavs, StoredCav};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use dataset::{load_dataset, load_examples, records_from_examples, save_dataset, Dataset, DatasetRecord, ImageRecord};
pub use heatmap::{emit_attribution, emit_sensitivity, render, Image, Layout};
pub use reports::{
    config_hash, write_attributions, write_metrics_csv, write_metrics_json, write_tcav_csv, write_tcav_json,
};
pub use stacks::{dump_attention, dump_gradients, load_attention, load_gradients, load_stack, LoadedStack, StackKind};
