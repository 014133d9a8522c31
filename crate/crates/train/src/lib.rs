//! Single-stage end-to-end training for the scene-prefix policy.

pub mod config;
pub mod corpus;
pub mod log;
pub mod step;
pub mod variants;

use std::collections::BTreeMap;
use std::path::Path;

use sceneflow_policy::{ModelConfig, PolicyModel};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Sim(#[from] sceneflow_sim::SimError),
    #[error(transparent)]
    Policy(#[from] sceneflow_policy::PolicyError),
}

pub use config::{FullConfig, TaskConfig, TrainConfig};
pub use corpus::{Corpus, CorpusChunk};
pub use log::{format_line, TrainLog};
pub use step::{LossBreakdown, Trainer};
pub use variants::{CarryMode, LossWeights, Variant};

/// Train one ablation variant on a corpus and save its checkpoint.
/// The returned history holds every step's loss breakdown.
pub fn run_variant(
    variant: Variant,
    model_cfg: ModelConfig,
    base_cfg: &TrainConfig,
    base_weights: LossWeights,
    corpus: &Corpus,
    out_path: &Path,
    log: &mut TrainLog,
) -> Result<(PolicyModel, Vec<LossBreakdown>), TrainError> {
    let cfg = TrainConfig {
        variant,
        carry_mode: variant.train_carry_mode(),
        ..base_cfg.clone()
    };
    let weights = variant.mask_weights(base_weights);
    let model = PolicyModel::new(model_cfg, cfg.seed, true)?;
    let mut trainer = Trainer::new(model, corpus, cfg.clone(), weights)?;
    let mut history = Vec::with_capacity(cfg.total_steps);
    for step in 0..cfg.total_steps {
        let b = trainer.train_step(step)?;
        log.record(step, &b)?;
        history.push(b);
    }
    log.finish()?;
    let meta = BTreeMap::from([
        ("variant".to_string(), variant.name().to_string()),
        ("train_steps".to_string(), cfg.total_steps.to_string()),
        ("train_seed".to_string(), cfg.seed.to_string()),
    ]);
    trainer.model.save(out_path, Some(&trainer.opt), meta)?;
    Ok((trainer.model, history))
}

/// Moving-average comparison used by the loss-trend checks: mean of the
/// first `window` entries vs mean of the last `window`.
pub fn trend_decreased(values: &[f64], window: usize) -> bool {
    if values.len() < 2 * window.max(1) {
        return false;
    }
    let head: f64 = values[..window].iter().sum::<f64>() / window as f64;
    let tail: f64 = values[values.len() - window..].iter().sum::<f64>() / window as f64;
    tail < head
}
