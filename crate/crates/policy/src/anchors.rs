//! Training-only two-level geometric anchor.
//!
//! Local: cross-view masked depth reconstruction. For each target view
//! the view's image hidden states are replaced by a broadcast learned
//! mask embedding, and a lightweight cross-attention head queried by the
//! shared template bank must recover that view's depth features from the
//! remaining views and the corrected scene representation.
//!
//! Global: a view-conditioned decoder reads a scene latent as keys and
//! values and regresses pooled geometric teacher features element-wise.
//! The same decoder instance also decodes the scene predictor's future
//! latents, so current and future representations live in one space.

use std::sync::Arc;

use sceneflow_nn::{
    DecoderBlock, Graph, Linear, MaskMatrix, ParamBuilder, ParamId, Tensor, Var,
};
use sceneflow_sim::{teachers::pool_grid, TeacherBundle, D_3D, D_DEPTH, DEPTH_TOKENS, GRID, VIEWS};

use crate::config::ModelConfig;
use crate::prefix::PrefixOut;

/// Local depth anchor: mask embedding + cross-attention depth head.
pub struct GeoAnchor {
    /// Broadcast replacement for a masked view's image hidden states.
    pub mask_embed: ParamId,
    pub head: DecoderBlock,
    pub out: Linear,
    cross_mask: Arc<MaskMatrix>,
    tokens_per_view: usize,
}

impl GeoAnchor {
    pub fn new(b: &mut ParamBuilder, cfg: &ModelConfig) -> Self {
        let ctx_len = VIEWS * cfg.tokens_per_view() + cfg.slots;
        Self {
            mask_embed: b.normal("geo.mask_embed", vec![1, cfg.model_dim], 0.02),
            head: DecoderBlock::new(b, "geo.head", &cfg.head_transformer(), false),
            out: Linear::new(b, "geo.out", cfg.model_dim, D_DEPTH),
            cross_mask: Arc::new(MaskMatrix::all_true(DEPTH_TOKENS, ctx_len)),
            tokens_per_view: cfg.tokens_per_view(),
        }
    }

    /// Predicted depth features for one masked target view.
    pub fn predict_view(
        &self,
        g: &mut Graph,
        template_bank: ParamId,
        prefix: &PrefixOut,
        target_view: usize,
    ) -> Var {
        let m = g.param(self.mask_embed);
        let broadcast = g.tape.concat_rows(&vec![m; self.tokens_per_view]);
        let mut ctx_parts: Vec<Var> = Vec::with_capacity(VIEWS + 1);
        for v in 0..VIEWS {
            ctx_parts.push(if v == target_view { broadcast } else { prefix.h_img[v] });
        }
        ctx_parts.push(prefix.s_p);
        let ctx = g.tape.concat_rows(&ctx_parts);
        let queries = g.param(template_bank);
        let kv = self.head.cross.project_kv(g, ctx);
        let h = self.head.apply(g, queries, None, &kv, &self.cross_mask);
        self.out.apply(g, h)
    }

    /// Cross-view masked depth reconstruction loss, averaged over views.
    /// Targets are the analytic depth features of the unmasked frames.
    pub fn local_anchor_loss(
        &self,
        g: &mut Graph,
        template_bank: ParamId,
        prefix: &PrefixOut,
        bundle: &TeacherBundle,
    ) -> Var {
        let mut terms = Vec::with_capacity(VIEWS);
        for view in 0..VIEWS {
            let pred = self.predict_view(g, template_bank, prefix, view);
            let target = g.tape.constant(
                Tensor::from_rows(DEPTH_TOKENS, D_DEPTH, bundle.depth[view].clone())
                    .expect("depth target shape"),
            );
            terms.push(g.tape.smooth_l1(pred, target, 1.0));
        }
        average_scalars(g, &terms)
    }
}

/// Shared view-conditioned decoder: learnable per-view query grids, one
/// cross-attention block over the scene latent, and a linear projector
/// into the geometric teacher feature space.
pub struct GlobalDecoder {
    pub queries: ParamId,
    pub block: DecoderBlock,
    pub proj: Linear,
    pub queries_per_view: usize,
    pool_factor: usize,
}

impl GlobalDecoder {
    pub fn new(b: &mut ParamBuilder, cfg: &ModelConfig) -> Self {
        let qpv = cfg.tokens_per_view();
        Self {
            queries: b.normal("dec.queries", vec![VIEWS * qpv, cfg.model_dim], 0.02),
            block: DecoderBlock::new(b, "dec.block", &cfg.head_transformer(), false),
            proj: Linear::new(b, "dec.proj", cfg.model_dim, D_3D),
            queries_per_view: qpv,
            pool_factor: cfg.patch,
        }
    }

    fn cross_mask(&self, latent_rows: usize) -> Arc<MaskMatrix> {
        Arc::new(MaskMatrix::all_true(VIEWS * self.queries_per_view, latent_rows))
    }

    /// Decode a latent (N x D) into per-view feature grids
    /// (VIEWS * queries_per_view) x D_3D.
    pub fn global_decode(&self, g: &mut Graph, latent: Var) -> Var {
        let rows = g.tape.value(latent).rows_cols().0;
        let mask = self.cross_mask(rows);
        let q = g.param(self.queries);
        let kv = self.block.cross.project_kv(g, latent);
        let h = self.block.apply(g, q, None, &kv, &mask);
        self.proj.apply(g, h)
    }

    /// Teacher grid pooled to the query grid, as a constant target.
    pub fn pooled_target(&self, g: &mut Graph, geom: &[Vec<f64>]) -> Var {
        let side = GRID / self.pool_factor;
        debug_assert_eq!(side * side, self.queries_per_view);
        let mut data = Vec::with_capacity(VIEWS * self.queries_per_view * D_3D);
        for view_grid in geom.iter() {
            data.extend(pool_grid(view_grid, D_3D, self.pool_factor));
        }
        let t = Tensor::from_rows(VIEWS * self.queries_per_view, D_3D, data)
            .expect("pooled target shape");
        g.tape.constant(t)
    }

    /// Element-wise l1 regression onto the pooled teacher features,
    /// averaged over views (views have equal cell counts, so one mean
    /// over the stacked grid is exactly the per-view average).
    pub fn global_anchor_loss(&self, g: &mut Graph, decoded: Var, geom: &[Vec<f64>]) -> Var {
        let target = self.pooled_target(g, geom);
        g.tape.l1(decoded, target)
    }

    /// Same loss against a target already pooled to the query grid
    /// (shape (VIEWS * queries_per_view) x D_3D).
    pub fn global_anchor_loss_pooled(&self, g: &mut Graph, decoded: Var, pooled: &Tensor) -> Var {
        let target = g.tape.constant(pooled.clone());
        g.tape.l1(decoded, target)
    }

    /// Pool raw per-view teacher grids into the decoder target tensor.
    pub fn pool_teacher(&self, geom: &[Vec<f64>]) -> Tensor {
        let mut data = Vec::with_capacity(VIEWS * self.queries_per_view * D_3D);
        for view_grid in geom.iter() {
            data.extend(pool_grid(view_grid, D_3D, self.pool_factor));
        }
        Tensor::from_rows(VIEWS * self.queries_per_view, D_3D, data).expect("pooled shape")
    }
}

/// Mean of scalar loss terms.
pub fn average_scalars(g: &mut Graph, terms: &[Var]) -> Var {
    assert!(!terms.is_empty());
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.tape.add(acc, t);
    }
    g.tape.scale(acc, 1.0 / terms.len() as f64)
}
