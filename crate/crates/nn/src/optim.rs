//! AdamW with decoupled weight decay.

use crate::params::{ParamGrads, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step_count: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: AdamWConfig) -> Self {
        let m = store.ids().map(|id| Tensor::zeros(store.get(id).shape().to_vec())).collect();
        let v = store.ids().map(|id| Tensor::zeros(store.get(id).shape().to_vec())).collect();
        Self { cfg, step_count: 0, m, v }
    }

    /// One update. Absent gradients are treated as zero; decoupled weight
    /// decay applies to every parameter regardless.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let c = self.cfg;
        let bc1 = 1.0 - libm::pow(c.beta1, t);
        let bc2 = 1.0 - libm::pow(c.beta2, t);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            let p = store.get(id).data().to_vec();
            let gz;
            let g: &[f64] = match grads.get(id) {
                Some(t) => t.data(),
                None => {
                    gz = vec![0.0; p.len()];
                    &gz
                }
            };
            let mut m = self.m[i].data().to_vec();
            let mut v = self.v[i].data().to_vec();
            let mut new_p = vec![0.0; p.len()];
            for j in 0..p.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                new_p[j] = p[j] - c.lr * (m_hat / (libm::sqrt(v_hat) + c.eps))
                    - c.lr * c.weight_decay * p[j];
            }
            let shape = store.get(id).shape().to_vec();
            self.m[i] = Tensor::new(shape.clone(), m).expect("moment shape");
            self.v[i] = Tensor::new(shape.clone(), v).expect("moment shape");
            store.set(id, Tensor::new(shape, new_p).expect("param shape"));
        }
    }
}
