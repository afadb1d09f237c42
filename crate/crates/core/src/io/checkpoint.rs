//! Model checkpoints. The blob is every parameter in the order of
//! `Params::flatten`: embeddings, optional patch projection, then per layer
//! the query, key and value projections head by head, the output projection,
//! both norms and the feed-forward weights, then the optional pooler and the
//! class head.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Params, Transformer};

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    config: ModelConfig,
    n_params: usize,
    config_hash: String,
}

const FORMAT: &str = "attnshap-checkpoint-v1";

pub fn save_checkpoint(path: &Path, model: &Transformer, config_hash: &str) -> Result<()> {
    let blob = model.params().flatten();
    let h = CheckpointHeader {
        format: FORMAT.into(),
        config: model.config().clone(),
        n_params: blob.len(),
        config_hash: config_hash.into(),
    };
    container::write(path, &h, &blob)
}

pub fn load_checkpoint(path: &Path) -> Result<Transformer> {
    let (h, blob): (CheckpointHeader, Vec<f64>) = container::read(path)?;
    if h.format != FORMAT {
        return Err(Error::Corrupt(format!("unknown checkpoint format `{}`", h.format)));
    }
    if blob.len() != h.n_params {
        return Err(Error::Corrupt(format!("header lists {} parameters, blob has {}", h.n_params, blob.len())));
    }
    h.config.validate().map_err(|e| Error::Corrupt(format!("checkpoint config: {}", e)))?;
    let mut params = Params::init(&h.config);
    params.assign_flat(&blob).map_err(|e| Error::Corrupt(e.to_string()))?;
    Transformer::from_params(h.config, params)
}
