use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where layer normalisation sits relative to each sub-layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    /// `LN(x + sublayer(x))`, as in the original encoder.
    #[default]
    Post,
    /// `x + sublayer(LN(x))`.
    Pre,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    #[default]
    Sinusoidal,
    None,
}

fn default_true() -> bool {
    true
}

/// Architecture and initialisation settings for [`Transformer`](super::Transformer).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub n_classes: usize,
    pub seed: u64,
    #[serde(default)]
    pub norm: NormPlacement,
    #[serde(default)]
    pub positional: Positional,
    /// `tanh` dense layer between the CLS state and the class head.
    #[serde(default = "default_true")]
    pub pooler: bool,
    /// Length of flattened image patches; enables patch slots when set.
    #[serde(default)]
    pub patch_dim: Option<usize>,
    #[serde(default)]
    pub cls_id: usize,
    #[serde(default = "default_mask_id")]
    pub mask_id: usize,
}

fn default_mask_id() -> usize {
    1
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_k: 8,
            d_v: 8,
            d_ff: 32,
            vocab_size: 32,
            max_len: 64,
            n_classes: 2,
            seed: 0,
            norm: NormPlacement::Post,
            positional: Positional::Sinusoidal,
            pooler: true,
            patch_dim: None,
            cls_id: 0,
            mask_id: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_k", self.d_k),
            ("d_v", self.d_v),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("n_classes", self.n_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{} must be at least 1", name)));
            }
        }
        if self.cls_id >= self.vocab_size || self.mask_id >= self.vocab_size {
            return Err(Error::Config("cls_id and mask_id must be inside the vocabulary".into()));
        }
        if self.cls_id == self.mask_id {
            return Err(Error::Config("cls_id and mask_id must differ".into()));
        }
        if self.patch_dim == Some(0) {
            return Err(Error::Config("patch_dim must be at least 1".into()));
        }
        Ok(())
    }
}
