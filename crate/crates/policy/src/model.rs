//! Full policy assembly: prefix encoder + action expert (the deployed
//! pair) and the training-only modules (geometric anchor, shared
//! decoder, scene predictor). Parameters live in one named store with
//! group prefixes, so checkpoints can drop the training-only groups and
//! the deployed model loads and runs without them.

use std::collections::BTreeMap;
use std::path::Path;

use sceneflow_nn::checkpoint::Checkpoint;
use sceneflow_nn::optim::AdamW;
use sceneflow_nn::{Graph, ParamBuilder, ParamStore, Precision, Tensor};
use sceneflow_sim::{Observation, ACTION_DIM};
use sceneflow_util::{derive_seed, DetRng};

use crate::anchors::{GeoAnchor, GlobalDecoder};
use crate::config::ModelConfig;
use crate::expert::ActionExpert;
use crate::predictor::ScenePredictor;
use crate::prefix::{instruction_tokens, PrefixOut, SlotBank, VlmEncoder};
use crate::PolicyError;

/// Parameter-name prefixes of the training-only modules.
pub const TRAINING_ONLY_PREFIXES: [&str; 3] = ["geo.", "dec.", "pred."];

pub struct TrainingModules {
    pub anchors: GeoAnchor,
    pub decoder: GlobalDecoder,
    pub predictor: ScenePredictor,
}

pub struct PolicyModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub vlm: VlmEncoder,
    pub expert: ActionExpert,
    pub training: Option<TrainingModules>,
    /// Per-dimension action normalization over the demo corpus.
    pub action_mean: Vec<f64>,
    pub action_std: Vec<f64>,
    /// Scene-noise scale for the sigma variant (running RMS of z_0).
    pub sigma: f64,
}

impl PolicyModel {
    /// Fresh model. Component init streams are independent, so the
    /// deployed (training = false) construction reproduces exactly the
    /// same vlm/expert values as the full one.
    pub fn new(cfg: ModelConfig, seed: u64, with_training: bool) -> Result<Self, PolicyError> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng_vlm = DetRng::new(derive_seed(seed, "init.vlm"));
        let vlm = VlmEncoder::new(&mut ParamBuilder::new(&mut store, &mut rng_vlm), &cfg);
        let mut rng_exp = DetRng::new(derive_seed(seed, "init.expert"));
        let expert = ActionExpert::new(&mut ParamBuilder::new(&mut store, &mut rng_exp), &cfg);
        let training = if with_training {
            let mut rng_geo = DetRng::new(derive_seed(seed, "init.geo"));
            let anchors = GeoAnchor::new(&mut ParamBuilder::new(&mut store, &mut rng_geo), &cfg);
            let mut rng_dec = DetRng::new(derive_seed(seed, "init.dec"));
            let decoder = GlobalDecoder::new(&mut ParamBuilder::new(&mut store, &mut rng_dec), &cfg);
            let mut rng_pred = DetRng::new(derive_seed(seed, "init.pred"));
            let predictor =
                ScenePredictor::new(&mut ParamBuilder::new(&mut store, &mut rng_pred), &cfg);
            Some(TrainingModules { anchors, decoder, predictor })
        } else {
            None
        };
        Ok(Self {
            cfg,
            store,
            vlm,
            expert,
            training,
            action_mean: vec![0.0; ACTION_DIM],
            action_std: vec![1.0; ACTION_DIM],
            sigma: 1.0,
        })
    }

    pub fn has_training_modules(&self) -> bool {
        self.training.is_some()
    }

    /// Normalize a raw action chunk (rows of action vectors).
    pub fn normalize_actions(&self, raw: &Tensor) -> Tensor {
        let (rows, cols) = raw.rows_cols();
        debug_assert_eq!(cols, ACTION_DIM);
        let mut data = raw.data().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] = (data[r * cols + c] - self.action_mean[c]) / self.action_std[c];
            }
        }
        Tensor::from_rows(rows, cols, data).expect("shape")
    }

    pub fn denormalize_actions(&self, norm: &Tensor) -> Tensor {
        let (rows, cols) = norm.rows_cols();
        debug_assert_eq!(cols, ACTION_DIM);
        let mut data = norm.data().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] = data[r * cols + c] * self.action_std[c] + self.action_mean[c];
            }
        }
        Tensor::from_rows(rows, cols, data).expect("shape")
    }

    /// Encode the prefix for a task instruction and prior bank.
    pub fn encode_prefix(
        &self,
        g: &mut Graph,
        obs: &Observation,
        task_index: usize,
        bank: &SlotBank,
    ) -> PrefixOut {
        let lang = instruction_tokens(task_index, self.cfg.lang_len);
        self.vlm.encode(g, obs, &lang, bank.prior.as_ref())
    }

    /// Full inference pass for one chunk: encode, cache, jointly denoise.
    /// Returns (normalized action chunk, scene chunk).
    pub fn sample_chunk(
        &self,
        obs: &Observation,
        task_index: usize,
        bank: &SlotBank,
        steps: usize,
        rng: &mut DetRng,
    ) -> Result<(Tensor, Tensor), PolicyError> {
        let mut g = Graph::new(&self.store, Precision::F64);
        let prefix = self.encode_prefix(&mut g, obs, task_index, bank);
        let kv = self.expert.project_prefix(&mut g, prefix.hidden);
        let r_t = Tensor::from_rows(1, obs.robot_state.len(), obs.robot_state.clone())
            .expect("robot state shape");
        self.expert.sample_chunk(
            &mut g,
            &r_t,
            &kv,
            steps,
            self.cfg.scene_noise,
            self.sigma,
            rng,
        )
    }

    // ---- checkpointing -------------------------------------------------

    pub fn to_checkpoint(&self, opt: Option<&AdamW>, extra: BTreeMap<String, String>) -> Checkpoint {
        let mut meta = extra;
        for (k, v) in self.cfg.to_meta() {
            meta.insert(format!("cfg.{k}"), v);
        }
        meta.insert("norm.action_mean".into(), encode_f64s(&self.action_mean));
        meta.insert("norm.action_std".into(), encode_f64s(&self.action_std));
        meta.insert("norm.sigma".into(), encode_f64s(&[self.sigma]));
        Checkpoint::from_store(&self.store, opt, meta)
    }

    pub fn save(&self, path: &Path, opt: Option<&AdamW>, extra: BTreeMap<String, String>) -> Result<(), PolicyError> {
        self.to_checkpoint(opt, extra).save(path).map_err(PolicyError::Nn)
    }

    /// Rebuild a model from a checkpoint. Training-only modules are
    /// constructed only when their parameter groups are present, so a
    /// stripped checkpoint loads straight into the deployed model.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, PolicyError> {
        let mut cfg_meta = BTreeMap::new();
        for (k, v) in &ckpt.meta {
            if let Some(stripped) = k.strip_prefix("cfg.") {
                cfg_meta.insert(stripped.to_string(), v.clone());
            }
        }
        let cfg = ModelConfig::from_meta(&cfg_meta)?;
        let with_training = TRAINING_ONLY_PREFIXES.iter().any(|p| ckpt.has_prefix(p));
        let mut model = PolicyModel::new(cfg, 0, with_training)?;
        ckpt.install(&mut model.store).map_err(PolicyError::Nn)?;
        if let Some(mean) = ckpt.meta.get("norm.action_mean") {
            model.action_mean = decode_f64s(mean)?;
        }
        if let Some(std) = ckpt.meta.get("norm.action_std") {
            model.action_std = decode_f64s(std)?;
        }
        if let Some(sig) = ckpt.meta.get("norm.sigma") {
            model.sigma = decode_f64s(sig)?[0];
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let ckpt = Checkpoint::load(path).map_err(PolicyError::Nn)?;
        Self::from_checkpoint(&ckpt)
    }
}

/// Bit-exact f64 list encoding for checkpoint metadata.
pub fn encode_f64s(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{:016x}", x.to_bits())).collect::<Vec<_>>().join(",")
}

pub fn decode_f64s(s: &str) -> Result<Vec<f64>, PolicyError> {
    s.split(',')
        .map(|part| {
            u64::from_str_radix(part, 16)
                .map(f64::from_bits)
                .map_err(|_| PolicyError::Config(format!("bad f64 hex field {part}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig { model_dim: 8, heads: 2, ffw_dim: 12, ..Default::default() }
    }

    #[test]
    fn deployed_init_matches_full_init_on_shared_groups() {
        let full = PolicyModel::new(tiny_cfg(), 9, true).unwrap();
        let dep = PolicyModel::new(tiny_cfg(), 9, false).unwrap();
        for id in dep.store.ids() {
            let name = dep.store.name(id).to_string();
            let full_id = full.store.id_of(&name).expect("shared param exists in full model");
            assert!(dep.store.get(id).bit_equal(full.store.get(full_id)), "{name} differs");
        }
    }

    #[test]
    fn stripped_checkpoint_loads_as_deployed() {
        let mut model = PolicyModel::new(tiny_cfg(), 3, true).unwrap();
        model.action_mean = vec![0.1; ACTION_DIM];
        model.action_std = vec![2.0; ACTION_DIM];
        let mut ckpt = model.to_checkpoint(None, BTreeMap::new());
        ckpt.strip_prefixes(&TRAINING_ONLY_PREFIXES);
        let loaded = PolicyModel::from_checkpoint(&ckpt).unwrap();
        assert!(!loaded.has_training_modules());
        assert_eq!(loaded.action_std, vec![2.0; ACTION_DIM]);
        // shared parameters identical
        for id in loaded.store.ids() {
            let name = loaded.store.name(id).to_string();
            let src = model.store.id_of(&name).unwrap();
            assert!(loaded.store.get(id).bit_equal(model.store.get(src)));
        }
    }

    #[test]
    fn f64_meta_roundtrip_bit_exact() {
        let xs = vec![0.1, -3.5, 1e-308];
        let enc = encode_f64s(&xs);
        let back = decode_f64s(&enc).unwrap();
        for (a, b) in xs.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
