//! Attention and transformer blocks built on the tape.
//!
//! All blocks are pre-norm residual with a final norm; masks are applied
//! in every layer. The same machinery backs the prefix encoder, the
//! scene predictor, the suffix decoder, and the lightweight
//! cross-attention heads.

use std::sync::Arc;

use crate::mask::MaskMatrix;
use crate::params::{Graph, ParamBuilder, ParamId};
use crate::tape::Var;
use crate::NnError;

#[derive(Debug, Clone, Copy)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ffw_dim: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.model_dim % self.heads != 0 {
            return Err(NnError::Shape(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

/// Scaled dot-product attention with a boolean mask. Masked logits never
/// enter the softmax, so masked positions carry exactly zero weight.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, mask: &Arc<MaskMatrix>) -> Var {
    let w = attention_weights(g, q, k, mask);
    g.tape.matmul(w, v)
}

/// The row-stochastic attention weight matrix, exposed for inspection.
pub fn attention_weights(g: &mut Graph, q: Var, k: Var, mask: &Arc<MaskMatrix>) -> Var {
    let d_k = g.tape.value(k).rows_cols().1;
    let kt = g.tape.transpose(k);
    let scores = g.tape.matmul(q, kt);
    let scaled = g.tape.scale(scores, 1.0 / libm::sqrt(d_k as f64));
    g.tape.masked_softmax(scaled, mask.clone())
}

/// Dense layer: x . W + b, with W stored (in, out).
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(b: &mut ParamBuilder, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: b.linear_weight(&format!("{name}.w"), fan_in, fan_out),
            b: b.zeros(&format!("{name}.b"), vec![fan_out]),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.tape.matmul(x, w);
        g.tape.add_row(y, b)
    }
}

/// LayerNorm with learned affine (gamma init 1, beta init 0).
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(b: &mut ParamBuilder, name: &str, dim: usize) -> Self {
        Self {
            gamma: b.ones(&format!("{name}.gamma"), vec![dim]),
            beta: b.zeros(&format!("{name}.beta"), vec![dim]),
            eps: 1e-6,
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let normed = g.tape.layer_norm_rows(x, self.eps);
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        let scaled = g.tape.mul_row(normed, gamma);
        g.tape.add_row(scaled, beta)
    }
}

/// Multi-head attention. Queries and keys/values may come from different
/// sequences (cross-attention); `mask` is (len_q x len_kv).
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub head_dim: usize,
}

/// Key/value projections precomputed once for a fixed context, reused
/// across repeated decoder calls (Euler sampling loop).
pub struct CachedKv {
    pub k: Var,
    pub v: Var,
}

impl MultiHeadAttention {
    pub fn new(b: &mut ParamBuilder, name: &str, cfg: &TransformerConfig) -> Self {
        let d = cfg.model_dim;
        Self {
            wq: Linear::new(b, &format!("{name}.q"), d, d),
            wk: Linear::new(b, &format!("{name}.k"), d, d),
            wv: Linear::new(b, &format!("{name}.v"), d, d),
            wo: Linear::new(b, &format!("{name}.o"), d, d),
            heads: cfg.heads,
            head_dim: cfg.head_dim(),
        }
    }

    pub fn project_kv(&self, g: &mut Graph, kv_in: Var) -> CachedKv {
        CachedKv { k: self.wk.apply(g, kv_in), v: self.wv.apply(g, kv_in) }
    }

    pub fn apply(&self, g: &mut Graph, q_in: Var, kv_in: Var, mask: &Arc<MaskMatrix>) -> Var {
        let kv = self.project_kv(g, kv_in);
        self.apply_cached(g, q_in, &kv, mask)
    }

    pub fn apply_cached(&self, g: &mut Graph, q_in: Var, kv: &CachedKv, mask: &Arc<MaskMatrix>) -> Var {
        let q = self.wq.apply(g, q_in);
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let off = h * self.head_dim;
            let qh = g.tape.slice_cols(q, off, self.head_dim);
            let kh = g.tape.slice_cols(kv.k, off, self.head_dim);
            let vh = g.tape.slice_cols(kv.v, off, self.head_dim);
            head_outs.push(attention(g, qh, kh, vh, mask));
        }
        let cat = g.tape.concat_cols(&head_outs);
        self.wo.apply(g, cat)
    }
}

/// Pre-norm feed-forward sublayer.
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

impl FeedForward {
    pub fn new(b: &mut ParamBuilder, name: &str, dim: usize, hidden: usize) -> Self {
        Self {
            lin1: Linear::new(b, &format!("{name}.ff1"), dim, hidden),
            lin2: Linear::new(b, &format!("{name}.ff2"), hidden, dim),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.lin1.apply(g, x);
        let a = g.tape.gelu(h);
        self.lin2.apply(g, a)
    }
}

/// Pre-norm self-attention encoder block.
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderBlock {
    pub fn new(b: &mut ParamBuilder, name: &str, cfg: &TransformerConfig) -> Self {
        Self {
            ln1: LayerNorm::new(b, &format!("{name}.ln1"), cfg.model_dim),
            attn: MultiHeadAttention::new(b, &format!("{name}.attn"), cfg),
            ln2: LayerNorm::new(b, &format!("{name}.ln2"), cfg.model_dim),
            ffn: FeedForward::new(b, &format!("{name}.ffn"), cfg.model_dim, cfg.ffw_dim),
        }
    }

    pub fn apply(&self, g: &mut Graph, x: Var, mask: &Arc<MaskMatrix>) -> Var {
        let n1 = self.ln1.apply(g, x);
        let a = self.attn.apply(g, n1, n1, mask);
        let x = g.tape.add(x, a);
        let n2 = self.ln2.apply(g, x);
        let f = self.ffn.apply(g, n2);
        g.tape.add(x, f)
    }
}

/// Mask-aware self-attention encoder stack with final norm.
pub struct TransformerStack {
    pub blocks: Vec<EncoderBlock>,
    pub final_ln: LayerNorm,
}

impl TransformerStack {
    pub fn new(b: &mut ParamBuilder, name: &str, cfg: &TransformerConfig) -> Self {
        cfg.validate().expect("valid transformer config");
        let blocks = (0..cfg.layers)
            .map(|i| EncoderBlock::new(b, &format!("{name}.block{i}"), cfg))
            .collect();
        Self { blocks, final_ln: LayerNorm::new(b, &format!("{name}.final_ln"), cfg.model_dim) }
    }

    /// The mask is applied in every layer.
    pub fn encode(&self, g: &mut Graph, tokens: Var, mask: &Arc<MaskMatrix>) -> Var {
        let mut x = tokens;
        for block in &self.blocks {
            x = block.apply(g, x, mask);
        }
        self.final_ln.apply(g, x)
    }
}

/// Decoder block: optional causal self-attention, cross-attention to a
/// fixed context, feed-forward. Pre-norm throughout.
pub struct DecoderBlock {
    pub self_ln: Option<LayerNorm>,
    pub self_attn: Option<MultiHeadAttention>,
    pub cross_ln: LayerNorm,
    pub cross: MultiHeadAttention,
    pub ffn_ln: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderBlock {
    pub fn new(b: &mut ParamBuilder, name: &str, cfg: &TransformerConfig, with_self: bool) -> Self {
        Self {
            self_ln: with_self.then(|| LayerNorm::new(b, &format!("{name}.sln"), cfg.model_dim)),
            self_attn: with_self.then(|| MultiHeadAttention::new(b, &format!("{name}.self"), cfg)),
            cross_ln: LayerNorm::new(b, &format!("{name}.cln"), cfg.model_dim),
            cross: MultiHeadAttention::new(b, &format!("{name}.cross"), cfg),
            ffn_ln: LayerNorm::new(b, &format!("{name}.fln"), cfg.model_dim),
            ffn: FeedForward::new(b, &format!("{name}.ffn"), cfg.model_dim, cfg.ffw_dim),
        }
    }

    pub fn apply(
        &self,
        g: &mut Graph,
        x: Var,
        self_mask: Option<&Arc<MaskMatrix>>,
        ctx_kv: &CachedKv,
        cross_mask: &Arc<MaskMatrix>,
    ) -> Var {
        let mut x = x;
        if let (Some(ln), Some(attn), Some(mask)) = (&self.self_ln, &self.self_attn, self_mask) {
            let n = ln.apply(g, x);
            let a = attn.apply(g, n, n, mask);
            x = g.tape.add(x, a);
        }
        let n = self.cross_ln.apply(g, x);
        let c = self.cross.apply_cached(g, n, ctx_kv, cross_mask);
        let x = g.tape.add(x, c);
        let n = self.ffn_ln.apply(g, x);
        let f = self.ffn.apply(g, n);
        g.tape.add(x, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Precision, Tensor};
    use crate::params::ParamStore;
    use sceneflow_util::DetRng;

    fn tiny_cfg() -> TransformerConfig {
        TransformerConfig { layers: 2, heads: 2, model_dim: 8, ffw_dim: 16 }
    }

    #[test]
    fn identity_mask_returns_v_rows() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Precision::F64);
        let q = g.tape.leaf(Tensor::from_rows(3, 4, (0..12).map(|i| i as f64 * 0.1).collect()).unwrap());
        let k = g.tape.leaf(Tensor::from_rows(3, 4, (0..12).map(|i| -(i as f64) * 0.2).collect()).unwrap());
        let v = g.tape.leaf(Tensor::from_rows(3, 4, (0..12).map(|i| i as f64).collect()).unwrap());
        let mask = Arc::new(MaskMatrix::identity(3));
        let out = attention(&mut g, q, k, v, &mask);
        let ov = g.tape.value(out);
        let vv = g.tape.value(v);
        assert!(ov.max_abs_diff(vv) < 1e-12);
    }

    #[test]
    fn uniform_keys_full_mask_yields_mean_of_v() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Precision::F64);
        let q = g.tape.leaf(Tensor::from_rows(2, 3, vec![0.5, -0.2, 1.0, 0.0, 0.3, -1.0]).unwrap());
        let k = g.tape.leaf(Tensor::from_rows(4, 3, vec![0.7; 12]).unwrap());
        let v = g.tape.leaf(Tensor::from_rows(4, 3, (0..12).map(|i| i as f64).collect()).unwrap());
        let mask = Arc::new(MaskMatrix::all_true(2, 4));
        let out = attention(&mut g, q, k, v, &mask);
        let ov = g.tape.value(out);
        // mean of v rows: column means over 4 rows
        for j in 0..3 {
            let mean = (0..4).map(|i| (i * 3 + j) as f64).sum::<f64>() / 4.0;
            for i in 0..2 {
                assert!((ov.data()[i * 3 + j] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_weights_are_exactly_zero() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store, Precision::F64);
        let mut rng = DetRng::new(3);
        let q = g.tape.leaf(Tensor::from_rows(4, 4, rng.gauss_vec(16)).unwrap());
        let k = g.tape.leaf(Tensor::from_rows(4, 4, rng.gauss_vec(16)).unwrap());
        let mask = Arc::new(MaskMatrix::causal(4));
        let w = attention_weights(&mut g, q, k, &mask);
        let wv = g.tape.value(w);
        for i in 0..4 {
            for j in 0..4 {
                if !mask.allowed(i, j) {
                    assert_eq!(wv.data()[i * 4 + j], 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_weight_stack_reduces_to_final_norm_of_input() {
        let mut store = ParamStore::new();
        let mut rng = DetRng::new(0);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let cfg = tiny_cfg();
        let stack = TransformerStack::new(&mut b, "t", &cfg);
        // zero every linear weight/bias; keep LayerNorm affine at init (gamma=1)
        let linear_ids: Vec<ParamId> = store
            .ids()
            .filter(|&id| {
                let n = store.name(id);
                !n.ends_with(".gamma") && !n.ends_with(".beta")
            })
            .collect();
        for id in linear_ids {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(shape));
        }
        let mut g = Graph::new(&store, Precision::F64);
        let x_data: Vec<f64> = (0..24).map(|i| (i as f64) * 0.37 - 2.0).collect();
        let x = g.tape.leaf(Tensor::from_rows(3, 8, x_data.clone()).unwrap());
        let mask = Arc::new(MaskMatrix::all_true(3, 3));
        let out = stack.encode(&mut g, x, &mask);
        let expect = g.tape.layer_norm_rows(x, 1e-6);
        let diff = g.tape.value(out).max_abs_diff(g.tape.value(expect));
        assert!(diff < 1e-12, "diff {diff}");
    }

    #[test]
    fn token_permutation_equivariance() {
        // two tokens with identical mask rows/cols permute outputs
        let mut store = ParamStore::new();
        let mut rng = DetRng::new(9);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let cfg = tiny_cfg();
        let stack = TransformerStack::new(&mut b, "t", &cfg);
        let mask = Arc::new(MaskMatrix::all_true(3, 3));
        let rows: Vec<Vec<f64>> = (0..3).map(|_| rng.gauss_vec(8)).collect();
        let run = |order: [usize; 3], store: &ParamStore| {
            let mut g = Graph::new(store, Precision::F64);
            let data: Vec<f64> = order.iter().flat_map(|&i| rows[i].clone()).collect();
            let x = g.tape.leaf(Tensor::from_rows(3, 8, data).unwrap());
            let out = stack.encode(&mut g, x, &mask);
            g.tape.value(out).data().to_vec()
        };
        let a = run([0, 1, 2], &store);
        let b_out = run([1, 0, 2], &store);
        for j in 0..8 {
            assert!((a[j] - b_out[8 + j]).abs() < 1e-12);
            assert!((a[8 + j] - b_out[j]).abs() < 1e-12);
            assert!((a[16 + j] - b_out[16 + j]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_sequence_is_finite() {
        let mut store = ParamStore::new();
        let mut rng = DetRng::new(4);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let cfg = tiny_cfg();
        let stack = TransformerStack::new(&mut b, "t", &cfg);
        let mut g = Graph::new(&store, Precision::F64);
        let x = g.tape.leaf(Tensor::from_rows(1, 8, rng.gauss_vec(8)).unwrap());
        let mask = Arc::new(MaskMatrix::all_true(1, 1));
        let out = stack.encode(&mut g, x, &mask);
        assert!(g.tape.value(out).is_finite());
    }
}
