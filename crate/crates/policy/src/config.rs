//! Model configuration. Toy defaults keep the whole pipeline trainable
//! on a desktop CPU while preserving every structural mechanism.

use sceneflow_nn::TransformerConfig;
use sceneflow_sim::{ACTION_DIM, CHANNELS, GRID, STATE_DIM, VIEWS};

use crate::PolicyError;

/// Scene-noise convention for the flow interpolants: unit noise on
/// standardized targets (the default operational recipe) or noise
/// rescaled by a running RMS estimate of the target magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneNoiseMode {
    Unit,
    Sigma,
}

impl SceneNoiseMode {
    pub fn name(&self) -> &'static str {
        match self {
            SceneNoiseMode::Unit => "unit",
            SceneNoiseMode::Sigma => "sigma",
        }
    }

    pub fn parse(s: &str) -> Result<Self, PolicyError> {
        match s {
            "unit" => Ok(SceneNoiseMode::Unit),
            "sigma" => Ok(SceneNoiseMode::Sigma),
            other => Err(PolicyError::Config(format!("unknown scene noise mode {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Model width D, shared by the encoder, predictor, and expert.
    pub model_dim: usize,
    pub heads: usize,
    pub ffw_dim: usize,
    /// Feed-forward width of the lightweight cross-attention heads
    /// (depth head, global decoder).
    pub head_ffw: usize,
    pub vlm_layers: usize,
    pub predictor_layers: usize,
    pub expert_layers: usize,
    /// Slots per observation/prior group (N).
    pub slots: usize,
    /// Image patch side; tokens per view = (GRID/patch)^2.
    pub patch: usize,
    /// Language instruction length (fixed task-id token sequence).
    pub lang_len: usize,
    /// Key-frame offsets k_i: the in-chunk index of the last action a
    /// prediction conditions on; the frame is the state after executing
    /// actions 0..=k_i. Strictly increasing, last = chunk_len - 1.
    pub schedule: Vec<usize>,
    /// Actions per chunk (H + 1).
    pub chunk_len: usize,
    pub euler_steps: usize,
    pub scene_noise: SceneNoiseMode,
    /// Detach s_p when initializing predictor query groups.
    pub detach_queries: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_dim: 64,
            heads: 4,
            ffw_dim: 256,
            head_ffw: 64,
            vlm_layers: 2,
            predictor_layers: 2,
            expert_layers: 2,
            slots: 4,
            patch: 4,
            lang_len: 4,
            schedule: vec![3, 7],
            chunk_len: 8,
            euler_steps: 10,
            scene_noise: SceneNoiseMode::Unit,
            detach_queries: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.model_dim % self.heads != 0 {
            return Err(PolicyError::Config("model_dim must divide by heads".into()));
        }
        if GRID % self.patch != 0 {
            return Err(PolicyError::Config("patch must divide the image grid".into()));
        }
        if self.schedule.is_empty() {
            return Err(PolicyError::Config("schedule must not be empty".into()));
        }
        if !self.schedule.windows(2).all(|w| w[0] < w[1]) {
            return Err(PolicyError::Config("schedule must be strictly increasing".into()));
        }
        if *self.schedule.last().unwrap() != self.chunk_len - 1 {
            return Err(PolicyError::Config(
                "last key-frame offset must land on the chunk end".into(),
            ));
        }
        if self.lang_len == 0 || self.slots == 0 || self.chunk_len == 0 {
            return Err(PolicyError::Config("zero-length segment".into()));
        }
        Ok(())
    }

    pub fn key_frames(&self) -> usize {
        self.schedule.len()
    }

    pub fn tokens_per_view(&self) -> usize {
        (GRID / self.patch) * (GRID / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * CHANNELS
    }

    pub fn views(&self) -> usize {
        VIEWS
    }

    pub fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    pub fn state_dim(&self) -> usize {
        STATE_DIM
    }

    /// Suffix length: [r_t | scene chunk | action chunk].
    pub fn suffix_len(&self) -> usize {
        1 + self.key_frames() * self.slots + self.chunk_len
    }

    pub fn transformer(&self, layers: usize) -> TransformerConfig {
        TransformerConfig {
            layers,
            heads: self.heads,
            model_dim: self.model_dim,
            ffw_dim: self.ffw_dim,
        }
    }

    /// Config for the lightweight single-layer heads.
    pub fn head_transformer(&self) -> TransformerConfig {
        TransformerConfig {
            layers: 1,
            heads: self.heads,
            model_dim: self.model_dim,
            ffw_dim: self.head_ffw,
        }
    }

    /// Flat key-value encoding for checkpoint metadata.
    pub fn to_meta(&self) -> Vec<(String, String)> {
        let sched = self
            .schedule
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("model_dim".into(), self.model_dim.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("ffw_dim".into(), self.ffw_dim.to_string()),
            ("head_ffw".into(), self.head_ffw.to_string()),
            ("vlm_layers".into(), self.vlm_layers.to_string()),
            ("predictor_layers".into(), self.predictor_layers.to_string()),
            ("expert_layers".into(), self.expert_layers.to_string()),
            ("slots".into(), self.slots.to_string()),
            ("patch".into(), self.patch.to_string()),
            ("lang_len".into(), self.lang_len.to_string()),
            ("schedule".into(), sched),
            ("chunk_len".into(), self.chunk_len.to_string()),
            ("euler_steps".into(), self.euler_steps.to_string()),
            ("scene_noise".into(), self.scene_noise.name().into()),
            ("detach_queries".into(), self.detach_queries.to_string()),
        ]
    }

    pub fn from_meta(meta: &std::collections::BTreeMap<String, String>) -> Result<Self, PolicyError> {
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| PolicyError::Config(format!("checkpoint meta missing {k}")))
        };
        let parse_usize = |k: &str| -> Result<usize, PolicyError> {
            get(k)?.parse().map_err(|_| PolicyError::Config(format!("bad meta field {k}")))
        };
        let schedule = get("schedule")?
            .split(',')
            .map(|s| s.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| PolicyError::Config("bad schedule meta".into()))?;
        let cfg = Self {
            model_dim: parse_usize("model_dim")?,
            heads: parse_usize("heads")?,
            ffw_dim: parse_usize("ffw_dim")?,
            head_ffw: parse_usize("head_ffw")?,
            vlm_layers: parse_usize("vlm_layers")?,
            predictor_layers: parse_usize("predictor_layers")?,
            expert_layers: parse_usize("expert_layers")?,
            slots: parse_usize("slots")?,
            patch: parse_usize("patch")?,
            lang_len: parse_usize("lang_len")?,
            schedule,
            chunk_len: parse_usize("chunk_len")?,
            euler_steps: parse_usize("euler_steps")?,
            scene_noise: SceneNoiseMode::parse(get("scene_noise")?)?,
            detach_queries: get("detach_queries")? == "true",
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn schedule_must_end_on_chunk_end() {
        let cfg = ModelConfig { schedule: vec![2, 5], ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn meta_roundtrip() {
        let cfg = ModelConfig::default();
        let meta: std::collections::BTreeMap<String, String> =
            cfg.to_meta().into_iter().collect();
        let back = ModelConfig::from_meta(&meta).unwrap();
        assert_eq!(back.schedule, cfg.schedule);
        assert_eq!(back.model_dim, cfg.model_dim);
        assert_eq!(back.scene_noise, cfg.scene_noise);
    }
}
