//! Training configuration and the plain-text key-value config file.
//!
//! File format: one `key = value` per line, `#` comments, blank lines
//! ignored. Every TrainConfig, TaskSpec, and LossWeights field has a
//! key; unknown keys are rejected. See `docs` in the README for the
//! full key table.

use std::path::Path;

use sceneflow_nn::Precision;
use sceneflow_sim::{InitMode, TaskId};

use crate::variants::{CarryMode, LossWeights, Variant};
use crate::TrainError;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub carry_mode: CarryMode,
    pub variant: Variant,
    /// fp64 verification mode or fp32 training mode.
    pub precision: Precision,
    /// Steps over which the sigma estimate accumulates (sigma noise mode).
    pub sigma_warmup: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            total_steps: 2500,
            lr: 1e-3,
            weight_decay: 0.0,
            seed: 0,
            carry_mode: CarryMode::CarriedDetachedUnroll,
            variant: Variant::Geo,
            precision: Precision::F64,
            sigma_warmup: 100,
            log_every: 50,
        }
    }
}

/// Episode/task parameters used by generation and evaluation.
#[derive(Debug, Clone)]
pub struct TaskConfig {
    pub tasks: Vec<TaskId>,
    pub mode: InitMode,
    pub seed: u64,
    pub horizon: usize,
    /// Demo episodes per task for gen-demos.
    pub episodes_per_task: usize,
    /// Rollout episodes per (task, mode) cell for evaluation.
    pub eval_episodes: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            tasks: TaskId::ALL.to_vec(),
            mode: InitMode::Rand,
            seed: 0,
            horizon: 160,
            episodes_per_task: 100,
            eval_episodes: 200,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FullConfig {
    pub train: TrainConfig,
    pub task: TaskConfig,
    pub loss: LossWeights,
}

impl FullConfig {
    pub fn parse_file(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self, TrainError> {
        let mut cfg = FullConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(TrainError::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            cfg.apply(key.trim(), value.trim())
                .map_err(|e| TrainError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.loss.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let bad = |what: &str| TrainError::Config(format!("bad {what} value `{value}`"));
        match key {
            "train.batch_size" => self.train.batch_size = value.parse().map_err(|_| bad(key))?,
            "train.total_steps" => self.train.total_steps = value.parse().map_err(|_| bad(key))?,
            "train.lr" => self.train.lr = value.parse().map_err(|_| bad(key))?,
            "train.weight_decay" => self.train.weight_decay = value.parse().map_err(|_| bad(key))?,
            "train.seed" => self.train.seed = value.parse().map_err(|_| bad(key))?,
            "train.carry_mode" => self.train.carry_mode = CarryMode::parse(value)?,
            "train.variant" => self.train.variant = Variant::parse(value)?,
            "train.precision" => {
                self.train.precision = match value {
                    "fp64" => Precision::F64,
                    "fp32" => Precision::F32,
                    _ => return Err(bad(key)),
                }
            }
            "train.sigma_warmup" => self.train.sigma_warmup = value.parse().map_err(|_| bad(key))?,
            "train.log_every" => self.train.log_every = value.parse().map_err(|_| bad(key))?,
            "task.tasks" => {
                self.task.tasks = value
                    .split(',')
                    .map(|t| TaskId::parse(t.trim()))
                    .collect::<Result<Vec<_>, _>>()?;
            }
            "task.mode" => self.task.mode = InitMode::parse(value)?,
            "task.seed" => self.task.seed = value.parse().map_err(|_| bad(key))?,
            "task.horizon" => self.task.horizon = value.parse().map_err(|_| bad(key))?,
            "task.episodes_per_task" => {
                self.task.episodes_per_task = value.parse().map_err(|_| bad(key))?
            }
            "task.eval_episodes" => self.task.eval_episodes = value.parse().map_err(|_| bad(key))?,
            "loss.lambda1" => self.loss.lambda1 = value.parse().map_err(|_| bad(key))?,
            "loss.lambda2" => self.loss.lambda2 = value.parse().map_err(|_| bad(key))?,
            "loss.lambda3" => self.loss.lambda3 = value.parse().map_err(|_| bad(key))?,
            "loss.lambda4" => self.loss.lambda4 = value.parse().map_err(|_| bad(key))?,
            other => return Err(TrainError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_keys() {
        let cfg = FullConfig::parse_str(
            "# comment\n\
             train.batch_size = 4\n\
             train.total_steps = 10\n\
             train.lr = 0.001\n\
             train.variant = baseline\n\
             train.precision = fp32\n\
             task.tasks = push-to-goal, wipe-cells\n\
             task.mode = clean\n\
             loss.lambda1 = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.variant, Variant::Baseline);
        assert_eq!(cfg.train.precision, Precision::F32);
        assert_eq!(cfg.task.tasks, vec![TaskId::PushToGoal, TaskId::WipeCells]);
        assert_eq!(cfg.task.mode, InitMode::Clean);
        assert_eq!(cfg.loss.lambda1, 0.5);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = FullConfig::parse_str("train.batchsize = 4\n");
        assert!(err.is_err());
        let msg = format!("{}", err.unwrap_err());
        assert!(msg.contains("unknown config key"), "{msg}");
    }

    #[test]
    fn malformed_line_rejected() {
        assert!(FullConfig::parse_str("train.batch_size 4\n").is_err());
        assert!(FullConfig::parse_str("loss.lambda1 = minus-one\n").is_err());
        assert!(FullConfig::parse_str("loss.lambda1 = -3\n").is_err());
    }
}
