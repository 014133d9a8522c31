//! Joint action-scene flow matching.
//!
//! Training: one shared time tau draws straight-line interpolants for
//! the action chunk and the standardized future-scene targets; the
//! suffix decoder (causal self-attention + full cross-attention to the
//! prefix cache) predicts per-token velocities for both blocks, and
//! velocity matching stops gradients through both targets.
//!
//! Inference: Euler integration from pure noise at tau = 1 down to 0
//! denoises the action chunk and the scene chunk jointly; the scene
//! block at the final key-frame offset becomes the next prior.

use std::sync::Arc;

use sceneflow_nn::{
    CachedKv, DecoderBlock, Graph, Linear, MaskMatrix, ParamBuilder, Tensor, Var,
};
use sceneflow_util::DetRng;

use crate::config::{ModelConfig, SceneNoiseMode};
use crate::PolicyError;

/// Sinusoidal tau features feeding the conditioning projection.
pub const TAU_FEATURES: usize = 8;

pub fn tau_features(tau: f64) -> Tensor {
    let mut data = Vec::with_capacity(TAU_FEATURES);
    for f in 0..TAU_FEATURES / 2 {
        let w = libm::pow(2.0, f as f64) * core::f64::consts::PI;
        data.push(libm::sin(w * tau));
        data.push(libm::cos(w * tau));
    }
    Tensor::from_rows(1, TAU_FEATURES, data).expect("tau features")
}

/// Straight-line interpolants at a shared time:
///   x_tau = tau * noise + (1 - tau) * target
/// for the action chunk and the scene chunk (scene noise optionally
/// sigma-rescaled). Pure tensor math.
pub fn make_interpolants(
    action_target: &Tensor,
    scene_target: &Tensor,
    tau: f64,
    noise_a: &Tensor,
    noise_s: &Tensor,
    sigma: f64,
) -> (Tensor, Tensor) {
    debug_assert!((0.0..=1.0).contains(&tau));
    let a = lerp(noise_a, action_target, tau, 1.0);
    let z = lerp(noise_s, scene_target, tau, sigma);
    (a, z)
}

/// tau * noise_scale * noise + (1 - tau) * target
fn lerp(noise: &Tensor, target: &Tensor, tau: f64, noise_scale: f64) -> Tensor {
    debug_assert_eq!(noise.shape(), target.shape());
    let data = noise
        .data()
        .iter()
        .zip(target.data())
        .map(|(&n, &t)| tau * noise_scale * n + (1.0 - tau) * t)
        .collect();
    Tensor::new(noise.shape().to_vec(), data).expect("interpolant shape")
}

/// Suffix decoder with velocity heads.
pub struct ActionExpert {
    pub embed_r: Linear,
    pub embed_z: Linear,
    pub embed_a: Linear,
    pub tau_proj: Linear,
    pub pos: sceneflow_nn::ParamId,
    pub blocks: Vec<DecoderBlock>,
    pub head_scene: Linear,
    pub head_action: Linear,
    pub suffix_mask: Arc<MaskMatrix>,
    slots: usize,
    key_frames: usize,
    chunk_len: usize,
    action_dim: usize,
    model_dim: usize,
}

/// Prefix key/value projections computed once per chunk and reused
/// across Euler steps.
pub struct PrefixKv {
    pub per_block: Vec<CachedKv>,
    pub cross_mask: Arc<MaskMatrix>,
}

pub struct VelocityOutput {
    pub action: Var,
    pub scene: Var,
}

impl ActionExpert {
    pub fn new(b: &mut ParamBuilder, cfg: &ModelConfig) -> Self {
        let d = cfg.model_dim;
        let tcfg = cfg.transformer(1);
        let blocks = (0..cfg.expert_layers)
            .map(|i| DecoderBlock::new(b, &format!("expert.block{i}"), &tcfg, true))
            .collect();
        Self {
            embed_r: Linear::new(b, "expert.embed_r", cfg.state_dim(), d),
            embed_z: Linear::new(b, "expert.embed_z", d, d),
            embed_a: Linear::new(b, "expert.embed_a", cfg.action_dim(), d),
            tau_proj: Linear::new(b, "expert.tau", TAU_FEATURES, d),
            pos: b.normal("expert.pos", vec![cfg.suffix_len(), d], 0.02),
            blocks,
            head_scene: Linear::new(b, "expert.head_scene", d, d),
            head_action: Linear::new(b, "expert.head_action", d, cfg.action_dim()),
            suffix_mask: Arc::new(MaskMatrix::causal(cfg.suffix_len())),
            slots: cfg.slots,
            key_frames: cfg.key_frames(),
            chunk_len: cfg.chunk_len,
            action_dim: cfg.action_dim(),
            model_dim: d,
        }
    }

    /// Project the prefix cache once; every suffix token may attend to
    /// the full cache.
    pub fn project_prefix(&self, g: &mut Graph, prefix_hidden: Var) -> PrefixKv {
        let prefix_len = g.tape.value(prefix_hidden).rows_cols().0;
        let suffix_len = 1 + self.key_frames * self.slots + self.chunk_len;
        PrefixKv {
            per_block: self
                .blocks
                .iter()
                .map(|blk| blk.cross.project_kv(g, prefix_hidden))
                .collect(),
            cross_mask: Arc::new(MaskMatrix::all_true(suffix_len, prefix_len)),
        }
    }

    /// One suffix forward pass: velocities for the scene and action
    /// blocks. `z_tau` is (K*N x D), `a_tau` is (chunk_len x action_dim)
    /// in normalized action space.
    pub fn forward(
        &self,
        g: &mut Graph,
        r_t: Var,
        z_tau: Var,
        a_tau: Var,
        tau: f64,
        kv: &PrefixKv,
    ) -> VelocityOutput {
        let r_tok = self.embed_r.apply(g, r_t);
        let z_tok = self.embed_z.apply(g, z_tau);
        let a_tok = self.embed_a.apply(g, a_tau);
        let tokens = g.tape.concat_rows(&[r_tok, z_tok, a_tok]);
        let pos = g.param(self.pos);
        let mut x = g.tape.add(tokens, pos);
        // tau conditioning added to every suffix token
        let tf = g.tape.constant(tau_features(tau));
        let tau_vec = self.tau_proj.apply(g, tf);
        let (rows, _) = g.tape.value(x).rows_cols();
        debug_assert_eq!(rows, 1 + self.key_frames * self.slots + self.chunk_len);
        let tau_row = g.tape.slice_rows(tau_vec, 0, 1);
        x = g.tape.add_row(x, tau_row);

        for (blk, kv_blk) in self.blocks.iter().zip(&kv.per_block) {
            x = blk.apply(g, x, Some(&self.suffix_mask), kv_blk, &kv.cross_mask);
        }
        let scene_h = g.tape.slice_rows(x, 1, self.key_frames * self.slots);
        let action_h = g.tape.slice_rows(x, 1 + self.key_frames * self.slots, self.chunk_len);
        VelocityOutput {
            scene: self.head_scene.apply(g, scene_h),
            action: self.head_action.apply(g, action_h),
        }
    }

    /// Flow-matching losses. Targets enter as detached constants, so no
    /// gradient reaches the action data or the scene predictor.
    pub fn fm_losses(
        &self,
        g: &mut Graph,
        v: &VelocityOutput,
        action_target: &Tensor,
        scene_target: &Tensor,
        noise_a: &Tensor,
        noise_s: &Tensor,
        sigma: f64,
    ) -> (Var, Var) {
        let act_t = velocity_target(noise_a, action_target, 1.0);
        let scn_t = velocity_target(noise_s, scene_target, sigma);
        let act_const = g.tape.constant(act_t);
        let scn_const = g.tape.constant(scn_t);
        let l_act = g.tape.mse(v.action, act_const);
        let l_scene = g.tape.mse(v.scene, scn_const);
        (l_act, l_scene)
    }

    /// Euler sampling from noise at tau = 1 down to 0 with shared steps;
    /// aborts on non-finite intermediates. Returns the denoised
    /// (normalized) action chunk and scene chunk.
    #[allow(clippy::too_many_arguments)]
    pub fn sample_chunk(
        &self,
        g: &mut Graph,
        r_t: &Tensor,
        kv: &PrefixKv,
        steps: usize,
        scene_noise: SceneNoiseMode,
        sigma: f64,
        rng: &mut DetRng,
    ) -> Result<(Tensor, Tensor), PolicyError> {
        assert!(steps >= 1, "sampler needs at least one step");
        let scene_rows = self.key_frames * self.slots;
        let z_scale = match scene_noise {
            SceneNoiseMode::Unit => 1.0,
            SceneNoiseMode::Sigma => sigma,
        };
        let mut a = Tensor::from_rows(
            self.chunk_len,
            self.action_dim,
            rng.gauss_vec(self.chunk_len * self.action_dim),
        )
        .expect("noise shape");
        let mut z = Tensor::from_rows(
            scene_rows,
            self.model_dim,
            rng.gauss_vec(scene_rows * self.model_dim)
                .into_iter()
                .map(|x| z_scale * x)
                .collect(),
        )
        .expect("noise shape");

        let r_var = g.tape.constant(r_t.clone());
        let dt = 1.0 / steps as f64;
        for i in 0..steps {
            let tau = 1.0 - i as f64 * dt;
            let a_var = g.tape.constant(a.clone());
            let z_var = g.tape.constant(z.clone());
            let v = self.forward(g, r_var, z_var, a_var, tau, kv);
            let va = g.tape.value(v.action);
            let vs = g.tape.value(v.scene);
            if !va.is_finite() || !vs.is_finite() {
                return Err(PolicyError::Numeric(format!(
                    "non-finite velocity at tau {tau:.3} (step {i})"
                )));
            }
            a = euler_update(&a, va, dt);
            z = euler_update(&z, vs, dt);
        }
        Ok((a, z))
    }
}

/// The analytic velocity target (scaled_noise - target).
pub fn velocity_target(noise: &Tensor, target: &Tensor, noise_scale: f64) -> Tensor {
    debug_assert_eq!(noise.shape(), target.shape());
    let data = noise
        .data()
        .iter()
        .zip(target.data())
        .map(|(&n, &t)| noise_scale * n - t)
        .collect();
    Tensor::new(noise.shape().to_vec(), data).expect("velocity target shape")
}

/// x <- x - dt * v
pub fn euler_update(x: &Tensor, v: &Tensor, dt: f64) -> Tensor {
    debug_assert_eq!(x.shape(), v.shape());
    let data = x.data().iter().zip(v.data()).map(|(&xv, &vv)| xv - dt * vv).collect();
    Tensor::new(x.shape().to_vec(), data).expect("euler shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolant_endpoints_exact() {
        let target = Tensor::from_rows(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.0, -1.0]).unwrap();
        let noise = Tensor::from_rows(2, 3, vec![0.3, 0.1, -0.7, 2.0, -0.2, 0.9]).unwrap();
        let scene_t = Tensor::from_rows(1, 6, vec![0.5; 6]).unwrap();
        let scene_n = Tensor::from_rows(1, 6, vec![-0.25; 6]).unwrap();
        let (a0, z0) = make_interpolants(&target, &scene_t, 0.0, &noise, &scene_n, 1.0);
        assert!(a0.bit_equal(&target) || a0.max_abs_diff(&target) == 0.0);
        assert!(z0.max_abs_diff(&scene_t) == 0.0);
        let (a1, z1) = make_interpolants(&target, &scene_t, 1.0, &noise, &scene_n, 1.0);
        assert!(a1.max_abs_diff(&noise) == 0.0);
        assert!(z1.max_abs_diff(&scene_n) == 0.0);
        // midpoint, element-wise
        let (am, _) = make_interpolants(&target, &scene_t, 0.5, &noise, &scene_n, 1.0);
        for i in 0..6 {
            let expect = 0.5 * noise.data()[i] + 0.5 * target.data()[i];
            assert!((am.data()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn analytic_velocity_recovers_target_for_any_step_count() {
        // with v = (noise - x0) constant, Euler from x1 = noise reaches x0
        // exactly for every step count (telescoping straight line)
        let x0 = Tensor::from_rows(2, 2, vec![0.7, -0.3, 1.5, 0.0]).unwrap();
        let noise = Tensor::from_rows(2, 2, vec![-1.0, 0.4, 0.2, 2.0]).unwrap();
        for steps in [1usize, 5, 10] {
            let v = velocity_target(&noise, &x0, 1.0);
            let mut x = noise.clone();
            let dt = 1.0 / steps as f64;
            for _ in 0..steps {
                x = euler_update(&x, &v, dt);
            }
            assert!(
                x.max_abs_diff(&x0) <= 1e-12,
                "steps {steps}: residual {}",
                x.max_abs_diff(&x0)
            );
        }
    }

    #[test]
    fn tau_features_are_finite_and_distinct() {
        let a = tau_features(0.0);
        let b = tau_features(0.37);
        assert!(a.is_finite() && b.is_finite());
        assert!(a.max_abs_diff(&b) > 1e-6);
    }
}
