//! Versioned self-describing checkpoint container.
//!
//! Layout: magic/version, a string-keyed metadata section, named parameter
//! tensors with exact shapes, and (optionally) AdamW state. All payloads
//! are little-endian f64, so save/load round-trips bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sceneflow_util::bytes as b;

use crate::optim::{AdamW, AdamWConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::NnError;

const MAGIC: &[u8; 8] = b"SFCKPT01";
const VERSION: u32 = 1;

pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerSnapshot>,
}

pub struct OptimizerSnapshot {
    pub cfg: AdamWConfig,
    pub step_count: u64,
    /// (m, v) aligned with `params` order.
    pub moments: Vec<(Tensor, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, opt: Option<&AdamW>, meta: BTreeMap<String, String>) -> Self {
        let params: Vec<(String, Tensor)> = store
            .ids()
            .map(|id| (store.name(id).to_string(), store.get(id).clone()))
            .collect();
        let optimizer = opt.map(|o| OptimizerSnapshot {
            cfg: o.cfg,
            step_count: o.step_count,
            moments: store
                .ids()
                .map(|id| (o.m[id.index()].clone(), o.v[id.index()].clone()))
                .collect(),
        });
        Self { meta, params, optimizer }
    }

    /// Drop parameter groups (and their optimizer moments) by name prefix.
    pub fn strip_prefixes(&mut self, prefixes: &[&str]) {
        let keep: Vec<bool> = self
            .params
            .iter()
            .map(|(name, _)| !prefixes.iter().any(|p| name.starts_with(p)))
            .collect();
        let mut kept_params = Vec::new();
        let mut kept_moments = Vec::new();
        for (i, (name, t)) in self.params.drain(..).enumerate() {
            if keep[i] {
                kept_params.push((name, t));
                if let Some(opt) = &self.optimizer {
                    kept_moments.push((opt.moments[i].0.clone(), opt.moments[i].1.clone()));
                }
            }
        }
        self.params = kept_params;
        if let Some(opt) = &mut self.optimizer {
            opt.moments = kept_moments;
        }
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.params.iter().any(|(n, _)| n.starts_with(prefix))
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let file = File::create(path).map_err(NnError::Io)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), NnError> {
        b::write_magic(w, MAGIC, VERSION)?;
        b::write_u32(w, self.meta.len() as u32)?;
        for (k, v) in &self.meta {
            b::write_str(w, k)?;
            b::write_str(w, v)?;
        }
        b::write_u32(w, self.params.len() as u32)?;
        for (name, t) in &self.params {
            b::write_str(w, name)?;
            write_tensor(w, t)?;
        }
        match &self.optimizer {
            None => b::write_u8(w, 0)?,
            Some(opt) => {
                b::write_u8(w, 1)?;
                b::write_u64(w, opt.step_count)?;
                b::write_f64(w, opt.cfg.lr)?;
                b::write_f64(w, opt.cfg.beta1)?;
                b::write_f64(w, opt.cfg.beta2)?;
                b::write_f64(w, opt.cfg.eps)?;
                b::write_f64(w, opt.cfg.weight_decay)?;
                for (m, v) in &opt.moments {
                    write_tensor(w, m)?;
                    write_tensor(w, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let file = File::open(path).map_err(NnError::Io)?;
        let mut r = BufReader::new(file);
        Self::read_from(&mut r)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, NnError> {
        let version = b::read_magic(r, MAGIC)?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let n_meta = b::read_u32(r)? as usize;
        let mut meta = BTreeMap::new();
        for _ in 0..n_meta {
            let k = b::read_str(r)?;
            let v = b::read_str(r)?;
            meta.insert(k, v);
        }
        let n_params = b::read_u32(r)? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = b::read_str(r)?;
            let t = read_tensor(r)?;
            params.push((name, t));
        }
        let optimizer = if b::read_u8(r)? == 1 {
            let step_count = b::read_u64(r)?;
            let cfg = AdamWConfig {
                lr: b::read_f64(r)?,
                beta1: b::read_f64(r)?,
                beta2: b::read_f64(r)?,
                eps: b::read_f64(r)?,
                weight_decay: b::read_f64(r)?,
            };
            let mut moments = Vec::with_capacity(n_params);
            for _ in 0..n_params {
                let m = read_tensor(r)?;
                let v = read_tensor(r)?;
                moments.push((m, v));
            }
            Some(OptimizerSnapshot { cfg, step_count, moments })
        } else {
            None
        };
        Ok(Self { meta, params, optimizer })
    }

    /// Install parameter values into a freshly built store by name.
    /// Every store entry must be present with a matching shape; extra
    /// checkpoint entries are an error (the caller chose the wrong model).
    pub fn install(&self, store: &mut ParamStore) -> Result<(), NnError> {
        for (name, t) in &self.params {
            let id = store
                .id_of(name)
                .ok_or_else(|| NnError::Checkpoint(format!("unexpected parameter {name}")))?;
            if store.get(id).shape() != t.shape() {
                return Err(NnError::Checkpoint(format!(
                    "shape mismatch for {name}: store {:?} vs file {:?}",
                    store.get(id).shape(),
                    t.shape()
                )));
            }
            store.set(id, t.clone());
        }
        for id in store.ids() {
            let name = store.name(id);
            if self.param(name).is_none() {
                return Err(NnError::Checkpoint(format!("missing parameter {name}")));
            }
        }
        Ok(())
    }

    /// Restore optimizer state aligned to a store that matches `params`.
    pub fn restore_optimizer(&self, store: &ParamStore) -> Result<Option<AdamW>, NnError> {
        let Some(snap) = &self.optimizer else { return Ok(None) };
        let mut opt = AdamW::new(store, snap.cfg);
        opt.step_count = snap.step_count;
        for (i, (name, _)) in self.params.iter().enumerate() {
            let id = store
                .id_of(name)
                .ok_or_else(|| NnError::Checkpoint(format!("unexpected parameter {name}")))?;
            opt.m[id.index()] = snap.moments[i].0.clone();
            opt.v[id.index()] = snap.moments[i].1.clone();
        }
        Ok(Some(opt))
    }
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<(), NnError> {
    b::write_u8(w, t.shape().len() as u8)?;
    for &d in t.shape() {
        b::write_u32(w, d as u32)?;
    }
    b::write_f64_slice(w, t.data())?;
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor, NnError> {
    let rank = b::read_u8(r)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(b::read_u32(r)? as usize);
    }
    let data = b::read_f64_slice(r)?;
    Tensor::new(shape, data)
}
