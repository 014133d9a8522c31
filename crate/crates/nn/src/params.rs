//! Named parameter store and the per-forward graph context.
//!
//! Parameters are registered once with deterministic seeded init and
//! addressed by [`ParamId`]. A [`Graph`] wraps one tape over a read-only
//! store, lazily registering each touched parameter as a leaf so backward
//! can report gradients aligned with the store.

use std::collections::BTreeMap;

use sceneflow_util::DetRng;

use crate::tape::{Grads, Tape, Var};
use crate::tensor::{Precision, Tensor};
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::Param(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.to_string(), id.0);
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        debug_assert_eq!(self.values[id.0].shape(), value.shape());
        self.values[id.0] = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        (0..self.names.len())
            .filter(|&i| self.names[i].starts_with(prefix))
            .map(ParamId)
            .collect()
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }
}

/// Deterministic initializers, all drawing from one caller-owned stream.
pub struct ParamBuilder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut DetRng,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut DetRng) -> Self {
        Self { store, rng }
    }

    /// Xavier-uniform weight matrix (fan_in x fan_out).
    pub fn linear_weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.uniform_in(-bound, bound))
            .collect();
        self.store
            .register(name, Tensor::new(vec![fan_in, fan_out], data).expect("weight shape"))
            .expect("unique name")
    }

    pub fn zeros(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        self.store.register(name, Tensor::zeros(shape)).expect("unique name")
    }

    pub fn ones(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        let n = shape.iter().product();
        self.store
            .register(name, Tensor::new(shape, vec![1.0; n]).expect("shape"))
            .expect("unique name")
    }

    /// Small-scale normal init for embeddings and slot banks.
    pub fn normal(&mut self, name: &str, shape: Vec<usize>, std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gauss() * std).collect();
        self.store
            .register(name, Tensor::new(shape, data).expect("shape"))
            .expect("unique name")
    }
}

/// One forward/backward pass over a read-only parameter store.
pub struct Graph<'p> {
    pub tape: Tape,
    store: &'p ParamStore,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore, precision: Precision) -> Self {
        Self {
            tape: Tape::new(precision),
            store,
            param_vars: vec![None; store.len()],
        }
    }

    /// Leaf for a parameter, registered once per graph.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.tape.param(id, self.store.get(id).clone());
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Backward pass returning gradients aligned with the store
    /// (None for parameters not on this tape or unreached by the loss).
    pub fn backward_params(&self, loss: Var) -> Result<ParamGrads, NnError> {
        let grads = self.tape.backward(loss)?;
        let mut by_param: Vec<Option<Tensor>> = vec![None; self.store.len()];
        for (id, var) in self.tape.param_leaves() {
            by_param[id.0] = Some(grads.of(&self.tape, var));
        }
        Ok(ParamGrads { by_param })
    }

    /// Backward pass exposing both per-parameter and per-node gradients.
    pub fn backward_full(&self, loss: Var) -> Result<(ParamGrads, Grads), NnError> {
        let grads = self.tape.backward(loss)?;
        let mut by_param: Vec<Option<Tensor>> = vec![None; self.store.len()];
        for (id, var) in self.tape.param_leaves() {
            by_param[id.0] = Some(grads.of(&self.tape, var));
        }
        Ok((ParamGrads { by_param }, grads))
    }
}

/// Gradients aligned with a [`ParamStore`]; None means zero.
#[derive(Clone)]
pub struct ParamGrads {
    by_param: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn zeros(store: &ParamStore) -> Self {
        Self { by_param: vec![None; store.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param[id.0].as_ref()
    }

    pub fn set(&mut self, id: ParamId, g: Tensor) {
        self.by_param[id.0] = Some(g);
    }

    pub fn is_zero(&self, id: ParamId) -> bool {
        match &self.by_param[id.0] {
            None => true,
            Some(t) => t.data().iter().all(|&x| x == 0.0),
        }
    }

    /// self += other, elementwise over present entries.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        debug_assert_eq!(self.by_param.len(), other.by_param.len());
        for (dst, src) in self.by_param.iter_mut().zip(&other.by_param) {
            match (dst.as_mut(), src) {
                (_, None) => {}
                (None, Some(s)) => *dst = Some(s.clone()),
                (Some(d), Some(s)) => {
                    let sum: Vec<f64> =
                        d.data().iter().zip(s.data()).map(|(a, b)| a + b).collect();
                    *d = Tensor::new(d.shape().to_vec(), sum).expect("grad shape");
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for slot in self.by_param.iter_mut() {
            if let Some(t) = slot {
                *t = t.map(|x| c * x);
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.by_param
            .iter()
            .flatten()
            .flat_map(|t| t.data().iter().map(|x| x.abs()))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_name_rejected() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::zeros(vec![2, 2])).unwrap();
        assert!(store.register("w", Tensor::zeros(vec![2, 2])).is_err());
    }

    #[test]
    fn graph_param_registered_once() {
        let mut store = ParamStore::new();
        let mut rng = DetRng::new(0);
        let mut b = ParamBuilder::new(&mut store, &mut rng);
        let w = b.linear_weight("w", 2, 2);
        let mut g = Graph::new(&store, Precision::F64);
        let v1 = g.param(w);
        let v2 = g.param(w);
        assert_eq!(v1, v2);
        assert_eq!(g.tape.len(), 1);
    }

    #[test]
    fn prefix_query() {
        let mut store = ParamStore::new();
        store.register("geo.head.w", Tensor::zeros(vec![1])).unwrap();
        store.register("vlm.block0.w", Tensor::zeros(vec![1])).unwrap();
        store.register("geo.mask", Tensor::zeros(vec![1])).unwrap();
        assert_eq!(store.ids_with_prefix("geo.").len(), 2);
        assert_eq!(store.ids_with_prefix("vlm.").len(), 1);
    }
}
