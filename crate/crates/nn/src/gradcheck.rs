//! Central finite-difference verification of reverse-mode gradients.
//!
//! The checker perturbs every element of the selected parameters by +/- h,
//! re-evaluates the loss through a caller-supplied closure, and compares
//! against the analytic gradient. Relative error uses a floored
//! denominator so near-zero gradients compare absolutely.

use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(String, usize, f64, f64)>, // (param, element, analytic, fd)
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Central differences at step h over the listed parameters.
///
/// `loss_fn` must be a pure function of the store (fp64 forward).
pub fn central_diff_check(
    store: &ParamStore,
    ids: &[ParamId],
    analytic: &ParamGrads,
    loss_fn: &dyn Fn(&ParamStore) -> f64,
    h: f64,
) -> GradCheckReport {
    let mut work = store.clone();
    let mut max_rel_err: f64 = 0.0;
    let mut worst = None;
    let mut checked = 0;

    for &id in ids {
        let base = store.get(id).clone();
        let shape = base.shape().to_vec();
        let ga = analytic.get(id).cloned();
        for j in 0..base.len() {
            let orig = base.data()[j];

            let mut plus = base.data().to_vec();
            plus[j] = orig + h;
            work.set(id, Tensor::new(shape.clone(), plus).expect("shape"));
            let lp = loss_fn(&work);

            let mut minus = base.data().to_vec();
            minus[j] = orig - h;
            work.set(id, Tensor::new(shape.clone(), minus).expect("shape"));
            let lm = loss_fn(&work);

            work.set(id, base.clone());

            let fd = (lp - lm) / (2.0 * h);
            let an = ga.as_ref().map_or(0.0, |t| t.data()[j]);
            let denom = an.abs().max(fd.abs()).max(1e-3);
            let rel = (an - fd).abs() / denom;
            checked += 1;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = Some((store.name(id).to_string(), j, an, fd));
            }
        }
    }
    GradCheckReport { checked, max_rel_err, worst }
}
