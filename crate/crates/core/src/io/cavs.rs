//! CAV files: one header record per CAV, directions concatenated in the blob.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container;
use crate::cav::Cav;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct CavRecord {
    concept: String,
    layer: usize,
    accuracy: f64,
    dim: usize,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct CavHeader {
    records: Vec<CavRecord>,
    config_hash: String,
}

/// A CAV with the seed it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredCav {
    pub cav: Cav,
    pub seed: Option<u64>,
}

pub fn save_cavs(path: &Path, cavs: &[StoredCav], config_hash: &str) -> Result<()> {
    let records = cavs
        .iter()
        .map(|c| CavRecord {
            concept: c.cav.concept.clone(),
            layer: c.cav.layer,
            accuracy: c.cav.accuracy,
            dim: c.cav.direction.len(),
            seed: c.seed,
        })
        .collect();
    let blob: Vec<f64> = cavs.iter().flat_map(|c| c.cav.direction.iter().copied()).collect();
    container::write(path, &CavHeader { records, config_hash: config_hash.into() }, &blob)
}

pub fn load_cavs(path: &Path) -> Result<Vec<StoredCav>> {
    let (h, blob): (CavHeader, Vec<f64>) = container::read(path)?;
    let total: usize = h.records.iter().map(|r| r.dim).sum();
    if total != blob.len() {
        return Err(Error::Corrupt(format!("records need {} floats, blob has {}", total, blob.len())));
    }
    let mut offset = 0;
    Ok(h.records
        .into_iter()
        .map(|r| {
            let direction = blob[offset..offset + r.dim].to_vec();
            offset += r.dim;
            StoredCav { cav: Cav { concept: r.concept, layer: r.layer, direction, accuracy: r.accuracy }, seed: r.seed }
        })
        .collect())
}
