//! Recurrent scene-prefix policy.
//!
//! The prefix encoder reads multi-view images, an instruction, per-view
//! observation slots, and recurrent prior slots under an asymmetric
//! attention mask; the action expert co-denoises an action chunk and a
//! matched scene chunk under one flow-matching time and the denoised
//! scene token at the chunk end becomes the next prior. Training-only
//! modules (two-level geometric anchor, scene predictor) ground the
//! scene state and supply future-scene targets; the deployed model runs
//! without them.

pub mod anchors;
pub mod config;
pub mod expert;
pub mod model;
pub mod predictor;
pub mod prefix;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Nn(#[from] sceneflow_nn::NnError),
}

pub use anchors::{GeoAnchor, GlobalDecoder};
pub use config::{ModelConfig, SceneNoiseMode};
pub use expert::{
    make_interpolants, tau_features, ActionExpert, PrefixKv, VelocityOutput,
};
pub use model::{PolicyModel, TrainingModules, TRAINING_ONLY_PREFIXES};
pub use predictor::{build_predictor_mask, make_targets, ScenePredictor};
pub use prefix::{
    build_layout, build_mask, instruction_tokens, PrefixLayout, PrefixOut, PriorSource, SlotBank,
    VlmEncoder,
};
