//! Finite-difference verification of the full transformer stack and of
//! every loss primitive, sampled over multiple random parameter draws.

use std::sync::Arc;

use sceneflow_nn::gradcheck::central_diff_check;
use sceneflow_nn::{
    DecoderBlock, Graph, MaskMatrix, ParamBuilder, ParamStore, Precision, Tensor,
    TransformerConfig, TransformerStack,
};
use sceneflow_util::DetRng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn tiny_cfg() -> TransformerConfig {
    TransformerConfig { layers: 2, heads: 2, model_dim: 8, ffw_dim: 12 }
}

#[test]
fn transformer_stack_gradients_match_finite_differences() {
    for draw in 0..10 {
        let mut store = ParamStore::new();
        let mut rng = DetRng::new(100 + draw);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let stack = TransformerStack::new(&mut b, "t", &tiny_cfg());
        let x = Tensor::from_rows(4, 8, rng.gauss_vec(32)).unwrap();
        let target = Tensor::from_rows(4, 8, rng.gauss_vec(32)).unwrap();
        let mask = Arc::new(MaskMatrix::causal(4));

        let loss_of = |s: &ParamStore| {
            let mut g = Graph::new(s, Precision::F64);
            let xin = g.tape.constant(x.clone());
            let tgt = g.tape.constant(target.clone());
            let out = stack.encode(&mut g, xin, &mask);
            let loss = g.tape.mse(out, tgt);
            g.tape.value(loss).item()
        };

        let mut g = Graph::new(&store, Precision::F64);
        let xin = g.tape.constant(x.clone());
        let tgt = g.tape.constant(target.clone());
        let out = stack.encode(&mut g, xin, &mask);
        let loss = g.tape.mse(out, tgt);
        let grads = g.backward_params(loss).unwrap();

        let ids: Vec<_> = store.ids().collect();
        let report = central_diff_check(&store, &ids, &grads, &loss_of, H);
        assert!(
            report.passes(TOL),
            "draw {draw}: max rel err {} at {:?} over {} params",
            report.max_rel_err,
            report.worst,
            report.checked
        );
    }
}

#[test]
fn decoder_block_gradients_match_finite_differences() {
    for draw in 0..5 {
        let mut store = ParamStore::new();
        let mut rng = DetRng::new(500 + draw);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let block = DecoderBlock::new(&mut b, "d", &tiny_cfg(), true);
        let x = Tensor::from_rows(3, 8, rng.gauss_vec(24)).unwrap();
        let ctx = Tensor::from_rows(5, 8, rng.gauss_vec(40)).unwrap();
        let target = Tensor::from_rows(3, 8, rng.gauss_vec(24)).unwrap();
        let self_mask = Arc::new(MaskMatrix::causal(3));
        let cross_mask = Arc::new(MaskMatrix::all_true(3, 5));

        let run = |s: &ParamStore| -> (f64, Option<sceneflow_nn::ParamGrads>) {
            let mut g = Graph::new(s, Precision::F64);
            let xin = g.tape.constant(x.clone());
            let cin = g.tape.constant(ctx.clone());
            let tgt = g.tape.constant(target.clone());
            let kv = block.cross.project_kv(&mut g, cin);
            let out = block.apply(&mut g, xin, Some(&self_mask), &kv, &cross_mask);
            let loss = g.tape.smooth_l1(out, tgt, 1.0);
            let l = g.tape.value(loss).item();
            (l, Some(g.backward_params(loss).unwrap()))
        };

        let (_, grads) = run(&store);
        let loss_of = |s: &ParamStore| run(s).0;
        let ids: Vec<_> = store.ids().collect();
        let report = central_diff_check(&store, &ids, &grads.unwrap(), &loss_of, H);
        assert!(
            report.passes(TOL),
            "draw {draw}: max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}

#[test]
fn loss_primitives_gradcheck_including_l1_kinks_avoided() {
    // l1/smooth_l1/mse on generic residuals (no exact zeros, away from beta)
    fn eval(
        s: &ParamStore,
        w: sceneflow_nn::ParamId,
        target: &Tensor,
        kind: usize,
        want_grads: bool,
    ) -> (f64, Option<sceneflow_nn::ParamGrads>) {
        let mut g = Graph::new(s, Precision::F64);
        let wv = g.param(w);
        let tgt = g.tape.constant(target.clone());
        let loss = match kind {
            0 => g.tape.mse(wv, tgt),
            1 => g.tape.l1(wv, tgt),
            _ => g.tape.smooth_l1(wv, tgt, 1.0),
        };
        let l = g.tape.value(loss).item();
        let grads = want_grads.then(|| g.backward_params(loss).unwrap());
        (l, grads)
    }

    for draw in 0..10 {
        let mut store = ParamStore::new();
        let mut rng = DetRng::new(900 + draw);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let w = b.normal("w", vec![3, 5], 1.0);
        let target =
            Tensor::from_rows(3, 5, rng.gauss_vec(15).iter().map(|x| x + 3.0).collect()).unwrap();

        for kind in 0..3 {
            let (_, grads) = eval(&store, w, &target, kind, true);
            let loss_of = |s: &ParamStore| eval(s, w, &target, kind, false).0;
            let report = central_diff_check(&store, &[w], &grads.unwrap(), &loss_of, H);
            assert!(report.passes(TOL), "kind {kind} draw {draw}: {}", report.max_rel_err);
        }
    }
}
