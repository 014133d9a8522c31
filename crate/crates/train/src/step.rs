//! The single-stage training loop: one optimizer, one loop, no phases.
//!
//! Each step samples batch elements, evaluates the full objective per
//! element on its own tape (parallel across elements, reduced in index
//! order so results are bit-deterministic), averages gradients, and
//! applies one AdamW update.
//!
//! Per-element order: prefix encode -> local anchor -> global anchor ->
//! scene prediction -> future-scene targets (standardized, detached) ->
//! shared-time interpolants -> suffix forward -> flow-matching losses ->
//! weighted total.

use rayon::prelude::*;

use sceneflow_nn::optim::{AdamW, AdamWConfig};
use sceneflow_nn::{Graph, ParamGrads, Tensor};
use sceneflow_policy::{make_interpolants, make_targets, PolicyModel, PriorSource, SceneNoiseMode, SlotBank};
use sceneflow_util::{derive_seed_indexed, DetRng};

use crate::config::TrainConfig;
use crate::corpus::Corpus;
use crate::variants::{CarryMode, LossWeights};
use crate::TrainError;

/// Per-step loss terms, mean over the trained elements. Disabled terms
/// report 0 and contribute nothing to the total.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub act_fm: f64,
    pub geo: f64,
    pub rep: f64,
    pub pred: f64,
    pub scene_fm: f64,
    pub total: f64,
    pub wall_ms: f64,
}

struct ElementSpec {
    chunk_idx: usize,
    /// Chunk whose sampled scene token supplies the carried prior.
    carried_from: Option<usize>,
    noise_seed: u64,
}

struct ElementResult {
    losses: LossBreakdown,
    grads: ParamGrads,
    z0_rms: f64,
}

pub struct Trainer<'c> {
    pub model: PolicyModel,
    pub opt: AdamW,
    pub weights: LossWeights,
    pub cfg: TrainConfig,
    corpus: &'c Corpus,
    sigma_sum: f64,
    sigma_count: usize,
}

impl<'c> Trainer<'c> {
    pub fn new(
        mut model: PolicyModel,
        corpus: &'c Corpus,
        cfg: TrainConfig,
        weights: LossWeights,
    ) -> Result<Self, TrainError> {
        weights.validate()?;
        if model.training.is_none() {
            return Err(TrainError::Config("model lacks training modules".into()));
        }
        let (mean, std) = corpus.action_stats();
        model.action_mean = mean;
        model.action_std = std;
        let opt = AdamW::new(
            &model.store,
            AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() },
        );
        Ok(Self { model, opt, weights, cfg, corpus, sigma_sum: 0.0, sigma_count: 0 })
    }

    /// Deterministic batch element specs for one step.
    fn batch_specs(&self, step: usize) -> Vec<ElementSpec> {
        let mut rng = DetRng::new(derive_seed_indexed(self.cfg.seed, "train.batch", step as u64));
        let noise_base = derive_seed_indexed(self.cfg.seed, "train.noise", step as u64);
        let mut specs = Vec::new();
        match self.cfg.carry_mode {
            CarryMode::EmbedAlways => {
                for e in 0..self.cfg.batch_size {
                    specs.push(ElementSpec {
                        chunk_idx: rng.below(self.corpus.chunks.len()),
                        carried_from: None,
                        noise_seed: derive_seed_indexed(noise_base, "elem", e as u64),
                    });
                }
            }
            CarryMode::CarriedDetachedUnroll => {
                for e in 0..self.cfg.batch_size {
                    let (c1, c2) = if self.corpus.pairs.is_empty() {
                        let c = rng.below(self.corpus.chunks.len());
                        (c, c)
                    } else {
                        self.corpus.pairs[rng.below(self.corpus.pairs.len())]
                    };
                    specs.push(ElementSpec {
                        chunk_idx: c1,
                        carried_from: None,
                        noise_seed: derive_seed_indexed(noise_base, "elem", 2 * e as u64),
                    });
                    specs.push(ElementSpec {
                        chunk_idx: c2,
                        carried_from: Some(c1),
                        noise_seed: derive_seed_indexed(noise_base, "elem", 2 * e as u64 + 1),
                    });
                }
            }
        }
        specs
    }

    /// One optimizer update. Returns the step's loss breakdown.
    pub fn train_step(&mut self, step: usize) -> Result<LossBreakdown, TrainError> {
        let t0 = std::time::Instant::now();
        let specs = self.batch_specs(step);
        let results: Vec<Result<ElementResult, TrainError>> = specs
            .par_iter()
            .map(|spec| eval_element(&self.model, &self.weights, self.corpus, spec, &self.cfg))
            .collect();

        let n = results.len() as f64;
        let mut agg = LossBreakdown::default();
        let mut grads = ParamGrads::zeros(&self.model.store);
        for r in results {
            let r = r?;
            agg.act_fm += r.losses.act_fm;
            agg.geo += r.losses.geo;
            agg.rep += r.losses.rep;
            agg.pred += r.losses.pred;
            agg.scene_fm += r.losses.scene_fm;
            agg.total += r.losses.total;
            grads.accumulate(&r.grads);
            if self.model.cfg.scene_noise == SceneNoiseMode::Sigma
                && self.opt.step_count < self.cfg.sigma_warmup as u64
            {
                self.sigma_sum += r.z0_rms;
                self.sigma_count += 1;
            }
        }
        for v in [
            &mut agg.act_fm,
            &mut agg.geo,
            &mut agg.rep,
            &mut agg.pred,
            &mut agg.scene_fm,
            &mut agg.total,
        ] {
            *v /= n;
        }
        if !agg.total.is_finite() {
            return Err(TrainError::Numeric(format!(
                "non-finite total at step {step}: actFM={} geo={} rep={} pred={} sceneFM={}",
                agg.act_fm, agg.geo, agg.rep, agg.pred, agg.scene_fm
            )));
        }
        grads.scale(1.0 / n);
        self.opt.step(&mut self.model.store, &grads);
        if self.model.cfg.scene_noise == SceneNoiseMode::Sigma && self.sigma_count > 0 {
            self.model.sigma = self.sigma_sum / self.sigma_count as f64;
        }
        agg.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        Ok(agg)
    }

    /// Gradients of one batch without applying the update (audits).
    pub fn grads_for_step(&self, step: usize) -> Result<ParamGrads, TrainError> {
        let specs = self.batch_specs(step);
        let mut grads = ParamGrads::zeros(&self.model.store);
        for spec in &specs {
            let r = eval_element(&self.model, &self.weights, self.corpus, spec, &self.cfg)?;
            grads.accumulate(&r.grads);
        }
        grads.scale(1.0 / specs.len() as f64);
        Ok(grads)
    }
}

/// Evaluate the full objective for one element: a chunk with either the
/// learned-embedding prior or a carried prior sampled (without
/// gradients) from the preceding chunk.
fn eval_element(
    model: &PolicyModel,
    weights: &LossWeights,
    corpus: &Corpus,
    spec: &ElementSpec,
    cfg: &TrainConfig,
) -> Result<ElementResult, TrainError> {
    let chunk = &corpus.chunks[spec.chunk_idx];
    let tm = model.training.as_ref().expect("training modules");
    let mut rng = DetRng::new(spec.noise_seed);

    // carried prior: sample the previous chunk in no-gradient mode
    let mut bank = SlotBank::fresh();
    if let Some(prev_idx) = spec.carried_from {
        let prev = &corpus.chunks[prev_idx];
        let embed_bank = SlotBank::fresh();
        let (_, scene) = model
            .sample_chunk(
                &prev.obs,
                prev.task.index(),
                &embed_bank,
                model.cfg.euler_steps,
                &mut rng,
            )
            .map_err(|e| TrainError::Numeric(format!("carry sampling: {e}")))?;
        bank.carry_prior(&scene, model.cfg.key_frames(), model.cfg.slots)
            .map_err(|e| TrainError::Numeric(e.to_string()))?;
        debug_assert_eq!(bank.source, PriorSource::Carried);
    }

    let mut g = Graph::new(&model.store, cfg.precision);
    let prefix = model.encode_prefix(&mut g, &chunk.obs, chunk.task.index(), &bank);

    // local depth anchor
    let mut loss_geo = None;
    if weights.lambda1 > 0.0 {
        let mut terms = Vec::new();
        for view in 0..chunk.depth_now.len() {
            let pred = tm.anchors.predict_view(&mut g, model.vlm.template_bank, &prefix, view);
            let target = g.tape.constant(
                Tensor::from_rows(sceneflow_sim::DEPTH_TOKENS, sceneflow_sim::D_DEPTH, chunk.depth_now[view].clone())
                    .expect("depth target"),
            );
            terms.push(g.tape.smooth_l1(pred, target, 1.0));
        }
        loss_geo = Some(sceneflow_policy::anchors::average_scalars(&mut g, &terms));
    }

    // global anchor on the current frame
    let mut loss_rep = None;
    if weights.lambda2 > 0.0 {
        let decoded = tm.decoder.global_decode(&mut g, prefix.s_p);
        loss_rep = Some(tm.decoder.global_anchor_loss_pooled(&mut g, decoded, &chunk.pooled_now));
    }

    // scene prediction (the forward always runs: the co-denoised scene
    // chunk needs targets even when the prediction loss is off)
    let actions_norm = model.normalize_actions(&chunk.actions_raw);
    let r_t = Tensor::from_rows(1, chunk.robot_state.len(), chunk.robot_state.clone())
        .expect("robot state");
    let rv = g.tape.constant(r_t);
    let av = g.tape.constant(actions_norm.clone());
    let latents = tm.predictor.predict(&mut g, rv, prefix.s_p, av);

    let mut loss_pred = None;
    if weights.lambda3 > 0.0 {
        let mut terms = Vec::new();
        for (i, pooled) in chunk.pooled_future.iter().enumerate() {
            let latent = g.tape.slice_rows(latents, i * model.cfg.slots, model.cfg.slots);
            let decoded = tm.decoder.global_decode(&mut g, latent);
            terms.push(tm.decoder.global_anchor_loss_pooled(&mut g, decoded, pooled));
        }
        loss_pred = Some(sceneflow_policy::anchors::average_scalars(&mut g, &terms));
    }

    // standardized, detached future-scene targets
    let z0 = make_targets(g.tape.value(latents));
    let z0_rms = {
        let n = z0.len() as f64;
        libm::sqrt(z0.data().iter().map(|x| x * x).sum::<f64>() / n)
    };
    let sigma = match model.cfg.scene_noise {
        SceneNoiseMode::Unit => 1.0,
        SceneNoiseMode::Sigma => model.sigma,
    };

    // shared flow time and independent noises
    let tau = rng.uniform();
    let eps_a = Tensor::from_rows(
        model.cfg.chunk_len,
        model.cfg.action_dim(),
        rng.gauss_vec(model.cfg.chunk_len * model.cfg.action_dim()),
    )
    .expect("noise");
    let kn = model.cfg.key_frames() * model.cfg.slots;
    let eps_s = Tensor::from_rows(kn, model.cfg.model_dim, rng.gauss_vec(kn * model.cfg.model_dim))
        .expect("noise");
    let (a_tau, z_tau) = make_interpolants(&actions_norm, &z0, tau, &eps_a, &eps_s, sigma);

    let kv = model.expert.project_prefix(&mut g, prefix.hidden);
    let atv = g.tape.constant(a_tau);
    let ztv = g.tape.constant(z_tau);
    let rv2 = g.tape.constant(
        Tensor::from_rows(1, chunk.robot_state.len(), chunk.robot_state.clone()).expect("r_t"),
    );
    let v = model.expert.forward(&mut g, rv2, ztv, atv, tau, &kv);
    let (l_act, l_scene) =
        model.expert.fm_losses(&mut g, &v, &actions_norm, &z0, &eps_a, &eps_s, sigma);

    // weighted total on the tape
    let mut total = l_act;
    for (term, lambda) in [
        (loss_geo, weights.lambda1),
        (loss_rep, weights.lambda2),
        (loss_pred, weights.lambda3),
        (Some(l_scene), weights.lambda4),
    ] {
        if let Some(t) = term {
            if lambda > 0.0 {
                let scaled = g.tape.scale(t, lambda);
                total = g.tape.add(total, scaled);
            }
        }
    }

    let value_of = |v: Option<sceneflow_nn::Var>| v.map_or(0.0, |t| g.tape.value(t).item());
    let losses = LossBreakdown {
        act_fm: g.tape.value(l_act).item(),
        geo: value_of(loss_geo),
        rep: value_of(loss_rep),
        pred: value_of(loss_pred),
        scene_fm: g.tape.value(l_scene).item(),
        total: g.tape.value(total).item(),
        wall_ms: 0.0,
    };
    for (name, v) in [
        ("L_actFM", losses.act_fm),
        ("L_geo", losses.geo),
        ("L_rep", losses.rep),
        ("L_pred", losses.pred),
        ("L_sceneFM", losses.scene_fm),
    ] {
        if !v.is_finite() {
            return Err(TrainError::Numeric(format!("non-finite {name} = {v}")));
        }
    }
    let grads = g.backward_params(total).map_err(|e| TrainError::Numeric(e.to_string()))?;
    Ok(ElementResult { losses, grads, z0_rms })
}
