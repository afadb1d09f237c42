use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Content of one sequence position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Token(usize),
    /// Flattened image patch, embedded by a linear projection.
    Patch(Vec<f64>),
}

/// A model input with its special positions marked.
///
/// Position 0 always holds the classification token. Every other special
/// position (separators) is listed in `special`; the remaining positions form
/// the original-token index set over which attributions are reported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceInput {
    slots: Vec<Slot>,
    special: Vec<bool>,
    mask_id: usize,
}

impl SequenceInput {
    /// `[CLS] body…`.
    pub fn from_tokens(cls_id: usize, mask_id: usize, body: &[usize]) -> Self {
        let mut slots = Vec::with_capacity(body.len() + 1);
        slots.push(Slot::Token(cls_id));
        slots.extend(body.iter().map(|&t| Slot::Token(t)));
        let mut special = vec![false; slots.len()];
        special[0] = true;
        Self { slots, special, mask_id }
    }

    /// `[CLS] patch…`.
    pub fn from_patches(cls_id: usize, mask_id: usize, patches: Vec<Vec<f64>>) -> Self {
        let mut slots = Vec::with_capacity(patches.len() + 1);
        slots.push(Slot::Token(cls_id));
        slots.extend(patches.into_iter().map(Slot::Patch));
        let mut special = vec![false; slots.len()];
        special[0] = true;
        Self { slots, special, mask_id }
    }

    /// Appends a special token (for example a separator) that masking never touches.
    pub fn push_special(&mut self, token: usize) {
        self.slots.push(Slot::Token(token));
        self.special.push(true);
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn cls_index(&self) -> usize {
        0
    }

    pub fn mask_id(&self) -> usize {
        self.mask_id
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn is_special(&self, pos: usize) -> bool {
        self.special.get(pos).copied().unwrap_or(false)
    }

    /// Positions of original (non-special) tokens, ascending.
    pub fn original_indices(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&i| !self.special[i]).collect()
    }

    /// Token ids, or `None` if any slot is a patch.
    pub fn token_ids(&self) -> Option<Vec<usize>> {
        self.slots
            .iter()
            .map(|s| match s {
                Slot::Token(t) => Some(*t),
                Slot::Patch(_) => None,
            })
            .collect()
    }
}

/// Replaces every original position outside `keep` with the mask token.
///
/// Special positions are never modified; listing one in `keep` is an error.
pub fn mask_tokens(x: &SequenceInput, keep: &[usize]) -> Result<SequenceInput> {
    let mut kept = vec![false; x.len()];
    for &k in keep {
        if k >= x.len() {
            return Err(Error::IndexOutOfRange { index: k, len: x.len() });
        }
        if x.special[k] {
            return Err(Error::InvalidInput(format!("keep set contains special position {}", k)));
        }
        kept[k] = true;
    }
    let mut out = x.clone();
    for (i, slot) in out.slots.iter_mut().enumerate() {
        if !out.special[i] && !kept[i] {
            *slot = Slot::Token(x.mask_id);
        }
    }
    Ok(out)
}
