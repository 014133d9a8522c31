//! Training-only scene predictor: a causal transformer mapping
//! (robot state, corrected scene, action chunk) to absolute future scene
//! latents at the sparse key-frame offsets, supervised through the
//! decoder shared with the global anchor.
//!
//! Sequence order: [r_t, s_p (N tokens), a_0..a_H, q_1..q_K (N tokens
//! each)], with every query group initialized as a copy of s_p. The mask
//! makes the prediction at offset k_i a function of actions 0..=k_i only,
//! and that invariance is exact at any depth because the attention
//! closure of an action token never exceeds its own offset.

use std::sync::Arc;

use sceneflow_nn::{
    Graph, Linear, MaskMatrix, ParamBuilder, Tensor, TransformerStack, Var,
};
use sceneflow_sim::TeacherBundle;

use crate::anchors::{average_scalars, GlobalDecoder};
use crate::config::ModelConfig;

/// Token roles along the predictor sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Robot,
    Scene,
    Action(usize),
    Query(usize),
}

fn roles(cfg: &ModelConfig) -> Vec<Role> {
    let mut out = Vec::with_capacity(predictor_len(cfg));
    out.push(Role::Robot);
    for _ in 0..cfg.slots {
        out.push(Role::Scene);
    }
    for j in 0..cfg.chunk_len {
        out.push(Role::Action(j));
    }
    for (i, _) in cfg.schedule.iter().enumerate() {
        for _ in 0..cfg.slots {
            out.push(Role::Query(i));
        }
    }
    out
}

pub fn predictor_len(cfg: &ModelConfig) -> usize {
    1 + cfg.slots + cfg.chunk_len + cfg.key_frames() * cfg.slots
}

/// Causal routing of the predictor:
///   - r_t and s_p are mutually visible;
///   - action j sees r_t, s_p, and actions 0..=j;
///   - query group i sees r_t, s_p, actions 0..=k_i, earlier query
///     groups, and itself;
///   - nothing sees a later query group.
pub fn build_predictor_mask(cfg: &ModelConfig) -> MaskMatrix {
    let rs = roles(cfg);
    let schedule = cfg.schedule.clone();
    MaskMatrix::from_fn(rs.len(), rs.len(), move |i, j| {
        use Role::*;
        match (rs[i], rs[j]) {
            (Robot | Scene, Robot | Scene) => true,
            (Robot | Scene, _) => false,
            (Action(aj), Robot | Scene) => {
                let _ = aj;
                true
            }
            (Action(ai), Action(aj)) => aj <= ai,
            (Action(_), Query(_)) => false,
            (Query(_), Robot | Scene) => true,
            (Query(qi), Action(aj)) => aj <= schedule[qi],
            (Query(qi), Query(qj)) => qj <= qi,
        }
    })
    .expect("predictor mask rows non-empty")
}

pub struct ScenePredictor {
    pub embed_r: Linear,
    pub embed_a: Linear,
    pub pos: sceneflow_nn::ParamId,
    pub stack: TransformerStack,
    pub mask: Arc<MaskMatrix>,
    slots: usize,
    chunk_len: usize,
    key_frames: usize,
    detach_queries: bool,
}

impl ScenePredictor {
    pub fn new(b: &mut ParamBuilder, cfg: &ModelConfig) -> Self {
        let d = cfg.model_dim;
        Self {
            embed_r: Linear::new(b, "pred.embed_r", cfg.state_dim(), d),
            embed_a: Linear::new(b, "pred.embed_a", cfg.action_dim(), d),
            pos: b.normal("pred.pos", vec![predictor_len(cfg), d], 0.02),
            stack: TransformerStack::new(b, "pred.enc", &cfg.transformer(cfg.predictor_layers)),
            mask: Arc::new(build_predictor_mask(cfg)),
            slots: cfg.slots,
            chunk_len: cfg.chunk_len,
            key_frames: cfg.key_frames(),
            detach_queries: cfg.detach_queries,
        }
    }

    /// Predict absolute future scene latents, stacked (K*N x D).
    /// `actions` is (chunk_len x action_dim) in normalized action space.
    pub fn predict(&self, g: &mut Graph, r_t: Var, s_p: Var, actions: Var) -> Var {
        let r_tok = self.embed_r.apply(g, r_t);
        let a_tok = self.embed_a.apply(g, actions);
        // query groups are literal copies of s_p, distinguished only by
        // their positional embeddings
        let q_init = if self.detach_queries { g.tape.detach(s_p) } else { s_p };
        let mut parts = vec![r_tok, s_p, a_tok];
        for _ in 0..self.key_frames {
            parts.push(q_init);
        }
        let tokens = g.tape.concat_rows(&parts);
        let pos = g.param(self.pos);
        let with_pos = g.tape.add(tokens, pos);
        let hidden = self.stack.encode(g, with_pos, &self.mask);
        let q_start = 1 + self.slots + self.chunk_len;
        g.tape.slice_rows(hidden, q_start, self.key_frames * self.slots)
    }

    /// Decode each predicted latent through the shared decoder and
    /// regress it onto the pooled future-frame teacher features,
    /// averaged over key frames and views.
    pub fn predictor_loss(
        &self,
        g: &mut Graph,
        decoder: &GlobalDecoder,
        latents: Var,
        future: &[TeacherBundle],
    ) -> Var {
        assert_eq!(future.len(), self.key_frames, "teacher/schedule mismatch");
        let mut terms = Vec::with_capacity(self.key_frames);
        for (i, bundle) in future.iter().enumerate() {
            let latent = g.tape.slice_rows(latents, i * self.slots, self.slots);
            let decoded = decoder.global_decode(g, latent);
            terms.push(decoder.global_anchor_loss(g, decoded, &bundle.geom));
        }
        average_scalars(g, &terms)
    }
}

/// Per-token standardization of predicted latents into flow targets:
/// mean 0 / variance 1 over the model axis with a floor guard, then
/// detached from the predictor. Pure tensor math (the targets carry no
/// gradient by construction).
pub fn make_targets(latents: &Tensor) -> Tensor {
    const EPS: f64 = 1e-8;
    let (rows, cols) = latents.rows_cols();
    let src = latents.data();
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
        let denom = libm::sqrt(var).max(EPS);
        for c in 0..cols {
            out[r * cols + c] = (row[c] - mean) / denom;
        }
    }
    Tensor::from_rows(rows, cols, out).expect("target shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            model_dim: 8,
            heads: 2,
            ffw_dim: 12,
            chunk_len: 6,
            schedule: vec![2, 5],
            ..Default::default()
        }
    }

    #[test]
    fn mask_matches_causal_rules() {
        let cfg = tiny_cfg();
        let m = build_predictor_mask(&cfg);
        let n = cfg.slots;
        let a0 = 1 + n; // first action index
        let q1 = 1 + n + cfg.chunk_len; // first query group start
        let q2 = q1 + n;
        // q1 cannot see the action after its offset k_1 = 2
        assert!(!m.allowed(q1, a0 + 3));
        assert!(m.allowed(q1, a0 + 2));
        // q2 sees q1, not the reverse
        assert!(m.allowed(q2, q1));
        assert!(!m.allowed(q1, q2));
        // actions are causal among themselves and see r/s
        assert!(m.allowed(a0 + 3, a0 + 1));
        assert!(!m.allowed(a0 + 1, a0 + 3));
        assert!(m.allowed(a0 + 1, 0));
        // r/s never see actions or queries
        assert!(!m.allowed(0, a0));
        assert!(!m.allowed(1, q1));
    }

    #[test]
    fn single_key_frame_sees_whole_chunk() {
        let cfg = ModelConfig {
            model_dim: 8,
            heads: 2,
            ffw_dim: 12,
            chunk_len: 6,
            schedule: vec![5],
            ..Default::default()
        };
        let m = build_predictor_mask(&cfg);
        let n = cfg.slots;
        let a0 = 1 + n;
        let q1 = 1 + n + cfg.chunk_len;
        for j in 0..cfg.chunk_len {
            assert!(m.allowed(q1, a0 + j));
        }
    }

    #[test]
    fn make_targets_standardizes_and_guards() {
        // constant token -> all zero under the floor guard
        let t = Tensor::from_rows(1, 4, vec![2.5; 4]).unwrap();
        let z = make_targets(&t);
        assert!(z.data().iter().all(|&x| x == 0.0));
        // already standardized token -> unchanged within 1e-12
        let vals = vec![1.0, -1.0, 1.0, -1.0];
        let t = Tensor::from_rows(1, 4, vals.clone()).unwrap();
        let z = make_targets(&t);
        for (a, b) in z.data().iter().zip(&vals) {
            assert!((a - b).abs() < 1e-12);
        }
        // random token: mean 0, var 1 by direct computation
        let t = Tensor::from_rows(1, 8, vec![0.3, -1.2, 4.0, 0.01, -2.2, 0.7, 1.1, -0.4]).unwrap();
        let z = make_targets(&t);
        let mean: f64 = z.data().iter().sum::<f64>() / 8.0;
        let var: f64 = z.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}
