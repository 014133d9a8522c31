//! Minimal differentiable numerical core: dense tensors, tape-based
//! reverse-mode autodiff, mask-aware multi-head attention, pre-norm
//! transformer blocks, standard losses, AdamW, a finite-difference
//! gradient checker, and a bit-exact checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod mask;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod transformer;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("mask error: {0}")]
    Mask(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub use mask::MaskMatrix;
pub use params::{Graph, ParamBuilder, ParamGrads, ParamId, ParamStore};
pub use tape::{Grads, Tape, Var};
pub use tensor::{Precision, Tensor};
pub use transformer::{
    attention, attention_weights, CachedKv, DecoderBlock, EncoderBlock, FeedForward, LayerNorm,
    Linear, MultiHeadAttention, TransformerConfig, TransformerStack,
};
