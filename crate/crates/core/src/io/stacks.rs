//! Attention and gradient stack dumps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container;
use crate::error::{Error, Result};
use crate::tensor::{AttentionStack, GradientStack, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackKind {
    Attention,
    Gradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StackHeader {
    #[serde(rename = "L")]
    layers: usize,
    #[serde(rename = "H")]
    heads: usize,
    #[serde(rename = "N")]
    seq_len: usize,
    kind: StackKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<usize>,
    config_hash: String,
}

/// A stack read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadedStack {
    Attention(AttentionStack),
    Gradient { class: Option<usize>, stack: GradientStack },
}

fn flatten(mats: &[Matrix]) -> Vec<f64> {
    mats.iter().flat_map(|m| m.data().iter().copied()).collect()
}

/// Matrices are stored layer-major, then head, each row-major.
pub fn dump_attention(path: &Path, stack: &AttentionStack, config_hash: &str) -> Result<()> {
    let h = StackHeader {
        layers: stack.layers(),
        heads: stack.heads(),
        seq_len: stack.seq_len(),
        kind: StackKind::Attention,
        class: None,
        config_hash: config_hash.into(),
    };
    container::write(path, &h, &flatten(stack.matrices()))
}

pub fn dump_gradients(path: &Path, stack: &GradientStack, class: usize, config_hash: &str) -> Result<()> {
    let h = StackHeader {
        layers: stack.layers(),
        heads: stack.heads(),
        seq_len: stack.seq_len(),
        kind: StackKind::Gradient,
        class: Some(class),
        config_hash: config_hash.into(),
    };
    container::write(path, &h, &flatten(stack.matrices()))
}

pub fn load_stack(path: &Path) -> Result<LoadedStack> {
    let (h, blob): (StackHeader, Vec<f64>) = container::read(path)?;
    let per = h.seq_len * h.seq_len;
    if blob.len() != h.layers * h.heads * per {
        return Err(Error::Corrupt(format!(
            "L={} H={} N={} needs {} floats, file has {}",
            h.layers,
            h.heads,
            h.seq_len,
            h.layers * h.heads * per,
            blob.len()
        )));
    }
    let mats = blob
        .chunks_exact(per.max(1))
        .take(h.layers * h.heads)
        .map(|c| Matrix::new(h.seq_len, h.seq_len, c.to_vec()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    match h.kind {
        StackKind::Attention => Ok(LoadedStack::Attention(
            AttentionStack::new(h.layers, h.heads, h.seq_len, mats).map_err(|e| Error::Corrupt(e.to_string()))?,
        )),
        StackKind::Gradient => Ok(LoadedStack::Gradient {
            class: h.class,
            stack: GradientStack::new(h.layers, h.heads, h.seq_len, mats).map_err(|e| Error::Corrupt(e.to_string()))?,
        }),
    }
}

pub fn load_attention(path: &Path) -> Result<AttentionStack> {
    match load_stack(path)? {
        LoadedStack::Attention(a) => Ok(a),
        _ => Err(Error::Data(format!("{} holds gradients, not attention", path.display()))),
    }
}

pub fn load_gradients(path: &Path) -> Result<GradientStack> {
    match load_stack(path)? {
        LoadedStack::Gradient { stack, .. } => Ok(stack),
        _ => Err(Error::Data(format!("{} holds attention, not gradients", path.display()))),
    }
}
