//! The ordered prefix, its asymmetric attention mask, the encoder, and
//! the prior carry.
//!
//! Prefix order: [image tokens per view, observation slots per view,
//! prior slots, language tokens]. The mask routes current image evidence
//! into the prior slots only through the per-view observation slots:
//!
//!   - image tokens attend within their own view;
//!   - language tokens attend to language and to all image tokens;
//!   - observation slots of view v attend to view v's image tokens and
//!     to their own group;
//!   - prior slots attend to all observation slots and to themselves;
//!   - nothing attends back to the prior slots.
//!
//! Keeping image tokens view-local (rather than attending across views)
//! is what makes view isolation exact at any depth: the transitive
//! attention closure of an observation slot never touches another view.

use std::sync::Arc;

use sceneflow_nn::{
    Graph, Linear, MaskMatrix, ParamBuilder, TransformerStack, Tensor, Var,
};
use sceneflow_sim::{Observation, CHANNELS, GRID};

use crate::config::ModelConfig;
use crate::PolicyError;

/// Token-segment layout of the prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixLayout {
    pub tokens_per_view: usize,
    pub slots: usize,
    pub views: usize,
    pub lang_len: usize,
}

impl PrefixLayout {
    pub fn total_len(&self) -> usize {
        self.views * self.tokens_per_view + self.views * self.slots + self.slots + self.lang_len
    }

    pub fn image_span(&self, view: usize) -> (usize, usize) {
        (view * self.tokens_per_view, self.tokens_per_view)
    }

    pub fn obs_span(&self, view: usize) -> (usize, usize) {
        (self.views * self.tokens_per_view + view * self.slots, self.slots)
    }

    pub fn prior_span(&self) -> (usize, usize) {
        (self.views * (self.tokens_per_view + self.slots), self.slots)
    }

    pub fn lang_span(&self) -> (usize, usize) {
        (self.prior_span().0 + self.slots, self.lang_len)
    }

    fn segment_of(&self, idx: usize) -> Segment {
        for v in 0..self.views {
            let (s, l) = self.image_span(v);
            if idx >= s && idx < s + l {
                return Segment::Image(v);
            }
        }
        for v in 0..self.views {
            let (s, l) = self.obs_span(v);
            if idx >= s && idx < s + l {
                return Segment::Obs(v);
            }
        }
        let (s, l) = self.prior_span();
        if idx >= s && idx < s + l {
            return Segment::Prior;
        }
        Segment::Lang
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Segment {
    Image(usize),
    Obs(usize),
    Prior,
    Lang,
}

/// Build the ordered layout. Every segment must be non-empty.
pub fn build_layout(
    tokens_per_view: usize,
    slots: usize,
    views: usize,
    lang_len: usize,
) -> Result<PrefixLayout, PolicyError> {
    if tokens_per_view == 0 || slots == 0 || views == 0 || lang_len == 0 {
        return Err(PolicyError::Config("zero-length prefix segment".into()));
    }
    Ok(PrefixLayout { tokens_per_view, slots, views, lang_len })
}

/// The asymmetric routing mask over the prefix.
pub fn build_mask(layout: &PrefixLayout) -> MaskMatrix {
    let n = layout.total_len();
    MaskMatrix::from_fn(n, n, |i, j| {
        use Segment::*;
        match (layout.segment_of(i), layout.segment_of(j)) {
            (Image(vi), Image(vj)) => vi == vj,
            (Image(_), _) => false,
            (Lang, Lang) | (Lang, Image(_)) => true,
            (Lang, _) => false,
            (Obs(vi), Image(vj)) | (Obs(vi), Obs(vj)) => vi == vj,
            (Obs(_), _) => false,
            (Prior, Obs(_)) | (Prior, Prior) => true,
            (Prior, _) => false,
        }
    })
    .expect("every prefix token attends at least to itself")
}

/// Where the prior slots came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorSource {
    /// First chunk of an episode: the learnable scene embedding.
    LearnedEmbedding,
    /// Carried from the previous chunk's denoised scene token.
    Carried,
}

/// Runtime slot state for one episode: the prior block and its origin.
/// Observation slots are not stored; they are pooled afresh from the
/// template bank at every encode.
#[derive(Debug, Clone)]
pub struct SlotBank {
    pub prior: Option<Tensor>,
    pub source: PriorSource,
}

impl SlotBank {
    /// Episode start: no carried prior yet.
    pub fn fresh() -> Self {
        Self { prior: None, source: PriorSource::LearnedEmbedding }
    }

    /// Write the denoised scene token at the final key-frame offset back
    /// as the next prior. `scene` is (K*slots, model_dim).
    pub fn carry_prior(&mut self, scene: &Tensor, key_frames: usize, slots: usize) -> Result<(), PolicyError> {
        let (rows, _) = scene.rows_cols();
        if rows != key_frames * slots {
            return Err(PolicyError::Shape(format!(
                "scene chunk rows {rows} != K*N = {}",
                key_frames * slots
            )));
        }
        let (_, c) = scene.rows_cols();
        let start = (key_frames - 1) * slots;
        let data = scene.data()[start * c..(start + slots) * c].to_vec();
        self.prior = Some(Tensor::from_rows(slots, c, data).expect("prior shape"));
        self.source = PriorSource::Carried;
        Ok(())
    }
}

/// Encoder outputs consumed downstream.
pub struct PrefixOut {
    /// All final hidden states (L x D): the prefix cache for the expert.
    pub hidden: Var,
    /// Corrected scene representation read at the prior-slot positions.
    pub s_p: Var,
    /// Per-view image hidden states.
    pub h_img: Vec<Var>,
    pub layout: PrefixLayout,
}

/// The VLM-lite prefix encoder.
pub struct VlmEncoder {
    pub patch_embed: Linear,
    pub lang_embed: sceneflow_nn::ParamId,
    pub pos: sceneflow_nn::ParamId,
    /// 256-entry template query bank, shared with the depth head.
    pub template_bank: sceneflow_nn::ParamId,
    /// Learnable first-chunk prior embedding (N x D).
    pub prior_embed: sceneflow_nn::ParamId,
    pub stack: TransformerStack,
    pub layout: PrefixLayout,
    pub mask: Arc<MaskMatrix>,
    slots: usize,
    model_dim: usize,
    patch: usize,
}

/// Language vocabulary: task ids 0..=2, padding 3.
pub const LANG_VOCAB: usize = 8;
pub const LANG_PAD: usize = 3;

/// Fixed instruction tokens for a task id.
pub fn instruction_tokens(task_index: usize, lang_len: usize) -> Vec<usize> {
    let mut toks = vec![LANG_PAD; lang_len];
    toks[0] = task_index;
    toks
}

impl VlmEncoder {
    pub fn new(b: &mut ParamBuilder, cfg: &ModelConfig) -> Self {
        let layout = build_layout(cfg.tokens_per_view(), cfg.slots, cfg.views(), cfg.lang_len)
            .expect("valid layout");
        let mask = Arc::new(build_mask(&layout));
        let d = cfg.model_dim;
        Self {
            patch_embed: Linear::new(b, "vlm.patch", cfg.patch_dim(), d),
            lang_embed: b.normal("vlm.lang_embed", vec![LANG_VOCAB, d], 0.02),
            pos: b.normal("vlm.pos", vec![layout.total_len(), d], 0.02),
            template_bank: b.normal("vlm.tmpl", vec![sceneflow_sim::DEPTH_TOKENS, d], 0.02),
            prior_embed: b.normal("vlm.prior_embed", vec![cfg.slots, d], 0.02),
            stack: TransformerStack::new(b, "vlm.enc", &cfg.transformer(cfg.vlm_layers)),
            layout,
            mask,
            slots: cfg.slots,
            model_dim: d,
            patch: cfg.patch,
        }
    }

    /// Mean-pool the template bank into N observation-slot initializers.
    pub fn pooled_slots(&self, g: &mut Graph) -> Var {
        let bank = g.param(self.template_bank);
        let rows = sceneflow_sim::DEPTH_TOKENS;
        let group = rows / self.slots;
        let mut pool = vec![0.0; self.slots * rows];
        for s in 0..self.slots {
            for r in s * group..(s + 1) * group {
                pool[s * rows + r] = 1.0 / group as f64;
            }
        }
        let pool_m = g
            .tape
            .constant(Tensor::from_rows(self.slots, rows, pool).expect("pool matrix"));
        g.tape.matmul(pool_m, bank)
    }

    /// Run the encoder. `prior` is the carried tensor or None for the
    /// learnable first-chunk embedding.
    pub fn encode(
        &self,
        g: &mut Graph,
        obs: &Observation,
        lang: &[usize],
        prior: Option<&Tensor>,
    ) -> PrefixOut {
        assert_eq!(lang.len(), self.layout.lang_len, "language length mismatch");
        let mut parts: Vec<Var> = Vec::new();
        for view in 0..self.layout.views {
            let patches = patchify(&obs.views[view], self.patch);
            let pv = g.tape.constant(patches);
            parts.push(self.patch_embed.apply(g, pv));
        }
        let pooled = self.pooled_slots(g);
        for _ in 0..self.layout.views {
            parts.push(pooled);
        }
        let prior_var = match prior {
            Some(t) => {
                assert_eq!(t.rows_cols(), (self.slots, self.model_dim), "prior shape");
                g.tape.constant(t.clone())
            }
            None => g.param(self.prior_embed),
        };
        parts.push(prior_var);
        let lang_table = g.param(self.lang_embed);
        parts.push(g.tape.gather_rows(lang_table, lang));

        let tokens = g.tape.concat_rows(&parts);
        let pos = g.param(self.pos);
        let with_pos = g.tape.add(tokens, pos);
        let hidden = self.stack.encode(g, with_pos, &self.mask);

        let (ps, pl) = self.layout.prior_span();
        let s_p = g.tape.slice_rows(hidden, ps, pl);
        let h_img = (0..self.layout.views)
            .map(|v| {
                let (s, l) = self.layout.image_span(v);
                g.tape.slice_rows(hidden, s, l)
            })
            .collect();
        PrefixOut { hidden, s_p, h_img, layout: self.layout.clone() }
    }
}

/// Flatten a view image (GRID x GRID x CHANNELS) into non-overlapping
/// patch rows of width patch*patch*CHANNELS, scanning patches row-major.
pub fn patchify(view: &[f64], patch: usize) -> Tensor {
    let per_side = GRID / patch;
    let mut data = Vec::with_capacity(per_side * per_side * patch * patch * CHANNELS);
    for pr in 0..per_side {
        for pc in 0..per_side {
            for r in 0..patch {
                for c in 0..patch {
                    let row = pr * patch + r;
                    let col = pc * patch + c;
                    for ch in 0..CHANNELS {
                        data.push(view[(row * GRID + col) * CHANNELS + ch]);
                    }
                }
            }
        }
    }
    Tensor::from_rows(per_side * per_side, patch * patch * CHANNELS, data).expect("patch shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_arithmetic_matches_reference_sizes() {
        // reference-scale check: 256 tokens/view, N=16, V=3, 8 language tokens
        let l = build_layout(256, 16, 3, 8).unwrap();
        assert_eq!(l.total_len(), 768 + 48 + 16 + 8);
        let (ps, _) = l.prior_span();
        let (ls, _) = l.lang_span();
        assert_eq!(ps + 16, ls, "prior block sits directly before language");
    }

    #[test]
    fn minimal_layout_order() {
        let l = build_layout(1, 1, 1, 1).unwrap();
        assert_eq!(l.total_len(), 4);
        assert_eq!(l.image_span(0), (0, 1));
        assert_eq!(l.obs_span(0), (1, 1));
        assert_eq!(l.prior_span(), (2, 1));
        assert_eq!(l.lang_span(), (3, 1));
    }

    #[test]
    fn layouts_are_deterministic() {
        assert_eq!(build_layout(16, 4, 3, 4).unwrap(), build_layout(16, 4, 3, 4).unwrap());
    }

    #[test]
    fn zero_segment_rejected() {
        assert!(build_layout(0, 4, 3, 4).is_err());
        assert!(build_layout(16, 4, 3, 0).is_err());
    }

    #[test]
    fn mask_rules_exhaustive() {
        let l = build_layout(2, 2, 3, 2).unwrap();
        let m = build_mask(&l);
        let (prior_s, prior_l) = l.prior_span();
        let (lang_s, lang_l) = l.lang_span();
        // no language token attends to any prior slot
        for i in lang_s..lang_s + lang_l {
            for j in prior_s..prior_s + prior_l {
                assert!(!m.allowed(i, j));
            }
        }
        // observation slots only see their own view's image tokens
        for v in 0..3 {
            let (os, ol) = l.obs_span(v);
            for v2 in 0..3 {
                let (is, il) = l.image_span(v2);
                for i in os..os + ol {
                    for j in is..is + il {
                        assert_eq!(m.allowed(i, j), v == v2);
                    }
                }
            }
        }
        // prior slots see all observation slots but no image tokens
        for i in prior_s..prior_s + prior_l {
            for v in 0..3 {
                let (os, ol) = l.obs_span(v);
                for j in os..os + ol {
                    assert!(m.allowed(i, j));
                }
                let (is, il) = l.image_span(v);
                for j in is..is + il {
                    assert!(!m.allowed(i, j));
                }
            }
            // and not language
            for j in lang_s..lang_s + lang_l {
                assert!(!m.allowed(i, j));
            }
        }
        // nothing attends to prior slots except the prior group itself
        for i in 0..l.total_len() {
            for j in prior_s..prior_s + prior_l {
                if i < prior_s || i >= prior_s + prior_l {
                    assert!(!m.allowed(i, j), "token {i} attends to prior {j}");
                }
            }
        }
    }

    #[test]
    fn carry_prior_takes_final_key_frame_group() {
        let k = 3;
        let n = 2;
        let d = 4;
        let data: Vec<f64> = (0..k * n * d).map(|i| i as f64).collect();
        let scene = Tensor::from_rows(k * n, d, data).unwrap();
        let mut bank = SlotBank::fresh();
        assert_eq!(bank.source, PriorSource::LearnedEmbedding);
        bank.carry_prior(&scene, k, n).unwrap();
        assert_eq!(bank.source, PriorSource::Carried);
        let prior = bank.prior.unwrap();
        // last group rows: indices 4..6 of the 6-row chunk
        assert_eq!(prior.data()[0], (2 * n * d) as f64);
        assert_eq!(prior.rows_cols(), (n, d));
    }

    #[test]
    fn carry_prior_shape_checked() {
        let scene = Tensor::from_rows(5, 4, vec![0.0; 20]).unwrap();
        let mut bank = SlotBank::fresh();
        assert!(bank.carry_prior(&scene, 3, 2).is_err());
    }
}
