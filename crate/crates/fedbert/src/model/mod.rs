//! Toy-scale BERT-style encoder for sequence classification.
//!
//! The model is embeddings plus `n_layers` pre-norm-free transformer blocks
//! (self-attention with padding mask, residual, layer norm, GELU feed-forward,
//! residual, layer norm), a tanh pooler over the CLS position, and a linear
//! classifier head. Everything runs in `f64` with analytic gradients; there is
//! no dropout, so forward and backward are bitwise deterministic.

mod adam;
mod encoder;
mod params;
mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use encoder::{forward_logits, loss_and_grad, predict};
pub use params::{init_params, GradientSet, ParameterSet, Tensor};
pub use train::{train_epochs, TrainOutcome, Trainer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Encoder dimensions. `d_model` must divide evenly into `n_heads` slices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub n_classes: usize,
    pub layernorm_eps: f64,
}

impl EncoderConfig {
    /// Default desk-scale shape: d_model 32, 2 heads, 2 layers, d_ff 64.
    pub fn toy(vocab_size: usize, max_len: usize, n_classes: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            d_ff: 64,
            max_len,
            n_classes,
            layernorm_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(ModelError::BadDimension { name, value });
            }
        }
        if self.n_classes < 2 {
            return Err(ModelError::BadDimension { name: "n_classes", value: self.n_classes });
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::HeadSplit { d_model: self.d_model, n_heads: self.n_heads });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("d_model {d_model} is not divisible by n_heads {n_heads}")]
    HeadSplit { d_model: usize, n_heads: usize },
    #[error("invalid dimension: {name} = {value}")]
    BadDimension { name: &'static str, value: usize },
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("sequence length {got} exceeds configured maximum {max}")]
    SequenceTooLong { got: usize, max: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch sequence lengths differ: {first} vs {other}")]
    RaggedBatch { first: usize, other: usize },
    #[error("batch has {inputs} sequences but {targets} targets")]
    TargetCountMismatch { inputs: usize, targets: usize },
    #[error("parameter layout mismatch at tensor {index}: `{expected}` vs `{found}`")]
    LayoutMismatch { index: usize, expected: String, found: String },
}
