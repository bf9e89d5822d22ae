//! Transformer encoder with a weight-tied masked-language-model head.
//!
//! Post-norm residual blocks, GELU feed-forward, learned absolute position
//! embeddings. Parameters are kept in `f64`; checkpoints store `f32`.

mod backward;
mod checkpoint;
mod forward;
mod params;

pub use backward::{backward, backward_batch, Gradients, LossAndGrads, MaskedExample};
pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{
    forward, forward_ids, gelu, gelu_grad, log_softmax_row, mlm_loss, ForwardMode, ForwardOutput,
};
pub use params::{EncoderLayer, ModelParameters};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no masked positions to compute a loss over")]
    NoMaskedPositions,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    pub mask_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            max_seq_len: 128,
            vocab_size: 1024,
            dropout_rate: 0.1,
            mask_rate: 0.2,
        }
    }
}

impl ModelConfig {
    /// A small configuration for synthetic benchmarks and tests.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            n_layers: 2,
            n_heads: 2,
            d_model: 32,
            d_ff: 64,
            max_seq_len: 32,
            vocab_size,
            dropout_rate: 0.0,
            mask_rate: 0.2,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad("layer, head, model and feed-forward sizes must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.max_seq_len < 3 {
            return bad("max_seq_len must be at least 3");
        }
        if self.vocab_size <= crate::tokenizer::SPECIAL_TOKENS.len() {
            return bad("vocab_size must exceed the number of special tokens");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return bad("mask_rate must lie in (0, 1)");
        }
        Ok(())
    }
}
