//! Tape-based reverse-mode autodiff over [`Tensor`] values.
//!
//! Each forward op pushes a node holding its output value and enough
//! information to propagate gradients. `backward` walks the tape in
//! reverse and returns exact gradients for every node; leaves registered
//! through [`Tape::param`] report per-parameter gradients.

use std::sync::Arc;

use crate::mask::MaskMatrix;
use crate::params::ParamId;
use crate::tensor::{matmul, matmul_nt, matmul_tn, Precision, Tensor};
use crate::NnError;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf { param: Option<ParamId> },
    Constant,
    /// out = ca * a + cb * b (same shape)
    AddScaled { a: Var, b: Var, ca: f64, cb: f64 },
    /// elementwise product
    Mul { a: Var, b: Var },
    /// out = a * c
    Scale { a: Var, c: f64 },
    /// (R,C) + row(C)
    AddRow { a: Var, row: Var },
    /// (R,C) * row(C), broadcast over rows
    MulRow { a: Var, row: Var },
    /// (m,k) . (k,n)
    Matmul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { a: Var, rows: usize, cols: usize },
    SliceRows { a: Var, start: usize, len: usize, cols: usize, total_rows: usize },
    SliceCols { a: Var, start: usize, len: usize, rows: usize, total_cols: usize },
    ConcatRows { parts: Vec<(Var, usize)>, cols: usize },
    ConcatCols { parts: Vec<(Var, usize)>, rows: usize },
    /// Row-wise softmax over allowed entries; disallowed weights are exactly 0.
    MaskedSoftmax { a: Var, mask: Arc<MaskMatrix> },
    /// Per-row standardization (mean 0, var 1 over the last axis), no affine.
    LayerNormRows { a: Var, inv_std: Vec<f64> },
    Gelu { a: Var },
    MeanAll { a: Var },
    /// mean((a-b)^2)
    Mse { a: Var, b: Var },
    /// mean(|a-b|)
    L1 { a: Var, b: Var },
    /// mean(huber_beta(a-b))
    SmoothL1 { a: Var, b: Var, beta: f64 },
    /// value pass-through, gradient barrier
    Detach,
    /// rows gathered from a table
    GatherRows { table: Var, indices: Arc<Vec<usize>>, cols: usize, table_rows: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
}

/// Gradients for every node of a tape, produced by [`Tape::backward`].
pub struct Grads {
    by_node: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient of the loss w.r.t. any node (zero tensor if unreached).
    pub fn of(&self, tape: &Tape, v: Var) -> Tensor {
        let shape = tape.value(v).shape().to_vec();
        match &self.by_node[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn is_zero(&self, v: Var) -> bool {
        match &self.by_node[v.0] {
            None => true,
            Some(g) => g.iter().all(|&x| x == 0.0),
        }
    }
}

impl Tape {
    pub fn new(precision: Precision) -> Self {
        Self { nodes: Vec::new(), precision }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn rounded(&self, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, self.precision.round_vec(data)).expect("op output shape")
    }

    // ---- leaves ------------------------------------------------------

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let t = self.maybe_round(t);
        self.push(t, Op::Leaf { param: None })
    }

    /// Differentiable parameter leaf tagged with its store id.
    pub fn param(&mut self, id: ParamId, t: Tensor) -> Var {
        let t = self.maybe_round(t);
        self.push(t, Op::Leaf { param: Some(id) })
    }

    fn maybe_round(&self, t: Tensor) -> Tensor {
        match self.precision {
            Precision::F64 => t,
            Precision::F32 => Tensor::new(
                t.shape().to_vec(),
                self.precision.round_vec(t.data().to_vec()),
            )
            .expect("leaf shape"),
        }
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.add_scaled(a, b, 1.0, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.add_scaled(a, b, 1.0, -1.0)
    }

    /// ca*a + cb*b; the straight-line interpolant is add_scaled(noise, target, tau, 1-tau).
    pub fn add_scaled(&mut self, a: Var, b: Var, ca: f64, cb: f64) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add_scaled shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data().iter())
            .map(|(&x, &y)| ca * x + cb * y)
            .collect();
        let t = self.rounded(av.shape().to_vec(), data);
        self.push(t, Op::AddScaled { a, b, ca, cb })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av.data().iter().zip(bv.data().iter()).map(|(&x, &y)| x * y).collect();
        let t = self.rounded(av.shape().to_vec(), data);
        self.push(t, Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| c * x).collect();
        let t = self.rounded(av.shape().to_vec(), data);
        self.push(t, Op::Scale { a, c })
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        let (r, c) = av.rows_cols();
        assert_eq!(rv.len(), c, "add_row width mismatch");
        let mut data = av.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += rv.data()[j];
            }
        }
        let t = self.rounded(av.shape().to_vec(), data);
        self.push(t, Op::AddRow { a, row })
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        let (r, c) = av.rows_cols();
        assert_eq!(rv.len(), c, "mul_row width mismatch");
        let mut data = av.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] *= rv.data()[j];
            }
        }
        let t = self.rounded(av.shape().to_vec(), data);
        self.push(t, Op::MulRow { a, row })
    }

    // ---- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.rows_cols();
        let (k2, n) = bv.rows_cols();
        assert_eq!(k, k2, "matmul inner dim mismatch {k} vs {k2}");
        let data = matmul(av.data(), bv.data(), m, k, n);
        let t = self.rounded(vec![m, n], data);
        self.push(t, Op::Matmul { a, b, m, k, n })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (r, c) = av.rows_cols();
        let src = av.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::new(vec![c, r], data).expect("transpose shape");
        self.push(t, Op::Transpose { a, rows: r, cols: c })
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (r, c) = av.rows_cols();
        assert!(start + len <= r, "slice_rows out of range");
        let data = av.data()[start * c..(start + len) * c].to_vec();
        let t = Tensor::new(vec![len, c], data).expect("slice shape");
        self.push(t, Op::SliceRows { a, start, len, cols: c, total_rows: r })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (r, c) = av.rows_cols();
        assert!(start + len <= c, "slice_cols out of range");
        let src = av.data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let t = Tensor::new(vec![r, len], data).expect("slice shape");
        self.push(t, Op::SliceCols { a, start, len, rows: r, total_cols: c })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).rows_cols().1;
        let mut data = Vec::new();
        let mut spans = Vec::with_capacity(parts.len());
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            let (r, c) = pv.rows_cols();
            assert_eq!(c, cols, "concat_rows width mismatch");
            data.extend_from_slice(pv.data());
            spans.push((p, r));
            rows += r;
        }
        let t = Tensor::new(vec![rows, cols], data).expect("concat shape");
        self.push(t, Op::ConcatRows { parts: spans, cols })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows_cols().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.value(p).rows_cols();
                assert_eq!(r, rows, "concat_cols height mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data().to_vec();
            for i in 0..rows {
                data[i * total + off..i * total + off + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let t = Tensor::new(vec![rows, total], data).expect("concat shape");
        let spans = parts.iter().zip(widths).map(|(&p, w)| (p, w)).collect();
        self.push(t, Op::ConcatCols { parts: spans, rows })
    }

    // ---- nonlinear ----------------------------------------------------

    /// Row-wise softmax; masked-out logits contribute exactly zero weight.
    pub fn masked_softmax(&mut self, a: Var, mask: Arc<MaskMatrix>) -> Var {
        let av = self.value(a);
        let (r, c) = av.rows_cols();
        assert_eq!((mask.rows(), mask.cols()), (r, c), "mask shape mismatch");
        let src = av.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let allowed = mask.row(i);
            let mut max = f64::NEG_INFINITY;
            for j in 0..c {
                if allowed[j] && row[j] > max {
                    max = row[j];
                }
            }
            let mut denom = 0.0;
            for j in 0..c {
                if allowed[j] {
                    let e = libm::exp(row[j] - max);
                    data[i * c + j] = e;
                    denom += e;
                }
            }
            for j in 0..c {
                data[i * c + j] /= denom;
            }
        }
        let t = self.rounded(vec![r, c], data);
        self.push(t, Op::MaskedSoftmax { a, mask })
    }

    /// Per-row standardization over the last axis, no learned affine.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let av = self.value(a);
        let (r, c) = av.rows_cols();
        let src = av.data();
        let mut data = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / libm::sqrt(var + eps);
            inv_std[i] = inv;
            for j in 0..c {
                data[i * c + j] = (row[j] - mean) * inv;
            }
        }
        let t = self.rounded(vec![r, c], data);
        self.push(t, Op::LayerNormRows { a, inv_std })
    }

    /// GELU, tanh approximation (smooth, exact analytic derivative).
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| gelu_fwd(x)).collect();
        let t = self.rounded(av.shape().to_vec(), data);
        self.push(t, Op::Gelu { a })
    }

    // ---- reductions / losses ------------------------------------------

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.data().iter().sum::<f64>() / av.len() as f64;
        let t = self.rounded(vec![1], vec![m]);
        self.push(t, Op::MeanAll { a })
    }

    /// mean((a - b)^2)
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mse shape mismatch");
        let n = av.len() as f64;
        let s = av
            .data()
            .iter()
            .zip(bv.data().iter())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        let t = self.rounded(vec![1], vec![s]);
        self.push(t, Op::Mse { a, b })
    }

    /// mean(|a - b|)
    pub fn l1(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "l1 shape mismatch");
        let n = av.len() as f64;
        let s = av
            .data()
            .iter()
            .zip(bv.data().iter())
            .map(|(&x, &y)| (x - y).abs())
            .sum::<f64>()
            / n;
        let t = self.rounded(vec![1], vec![s]);
        self.push(t, Op::L1 { a, b })
    }

    /// mean(huber): 0.5 r^2 / beta for |r| < beta, else |r| - beta/2.
    pub fn smooth_l1(&mut self, a: Var, b: Var, beta: f64) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "smooth_l1 shape mismatch");
        assert!(beta > 0.0, "smooth_l1 beta must be positive");
        let n = av.len() as f64;
        let s = av
            .data()
            .iter()
            .zip(bv.data().iter())
            .map(|(&x, &y)| {
                let r = (x - y).abs();
                if r < beta {
                    0.5 * r * r / beta
                } else {
                    r - 0.5 * beta
                }
            })
            .sum::<f64>()
            / n;
        let t = self.rounded(vec![1], vec![s]);
        self.push(t, Op::SmoothL1 { a, b, beta })
    }

    /// Gradient barrier: value passes, gradients stop.
    pub fn detach(&mut self, a: Var) -> Var {
        let t = self.value(a).clone();
        self.push(t, Op::Detach)
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let tv = self.value(table);
        let (r, c) = tv.rows_cols();
        let src = tv.data();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &idx in indices {
            assert!(idx < r, "gather index {idx} out of range {r}");
            data.extend_from_slice(&src[idx * c..(idx + 1) * c]);
        }
        let t = Tensor::new(vec![indices.len(), c], data).expect("gather shape");
        self.push(
            t,
            Op::GatherRows { table, indices: Arc::new(indices.to_vec()), cols: c, table_rows: r },
        )
    }

    // ---- backward ------------------------------------------------------

    /// Reverse-mode gradients of a scalar loss for every node on the tape.
    pub fn backward(&self, loss: Var) -> Result<Grads, NnError> {
        if self.value(loss).len() != 1 {
            return Err(NnError::Shape("backward requires a scalar loss".into()));
        }
        let mut by_node: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        by_node[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let g = match by_node[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &g, &mut by_node);
            by_node[idx] = Some(g);
        }
        Ok(Grads { by_node })
    }

    fn accumulate(&self, idx: usize, g: &[f64], by_node: &mut [Option<Vec<f64>>]) {
        let add_to = |by_node: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>| {
            match &mut by_node[v.0] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(contrib) {
                        *a += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        match &self.nodes[idx].op {
            Op::Leaf { .. } | Op::Constant | Op::Detach => {}
            Op::AddScaled { a, b, ca, cb } => {
                add_to(by_node, *a, g.iter().map(|&x| ca * x).collect());
                add_to(by_node, *b, g.iter().map(|&x| cb * x).collect());
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                add_to(by_node, *a, g.iter().zip(bv).map(|(&x, &y)| x * y).collect());
                add_to(by_node, *b, g.iter().zip(av).map(|(&x, &y)| x * y).collect());
            }
            Op::Scale { a, c } => {
                add_to(by_node, *a, g.iter().map(|&x| c * x).collect());
            }
            Op::AddRow { a, row } => {
                let (r, c) = self.value(*a).rows_cols();
                add_to(by_node, *a, g.to_vec());
                let mut rg = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        rg[j] += g[i * c + j];
                    }
                }
                add_to(by_node, *row, rg);
            }
            Op::MulRow { a, row } => {
                let av = self.value(*a).data();
                let rv = self.value(*row).data();
                let (r, c) = self.value(*a).rows_cols();
                let mut ag = vec![0.0; r * c];
                let mut rg = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        ag[i * c + j] = g[i * c + j] * rv[j];
                        rg[j] += g[i * c + j] * av[i * c + j];
                    }
                }
                add_to(by_node, *a, ag);
                add_to(by_node, *row, rg);
            }
            Op::Matmul { a, b, m, k, n } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                // dA = g . B^T ; dB = A^T . g
                add_to(by_node, *a, matmul_nt(g, bv, *m, *n, *k));
                add_to(by_node, *b, matmul_tn(av, g, *k, *m, *n));
            }
            Op::Transpose { a, rows, cols } => {
                let mut ag = vec![0.0; rows * cols];
                for i in 0..*cols {
                    for j in 0..*rows {
                        ag[j * cols + i] = g[i * rows + j];
                    }
                }
                add_to(by_node, *a, ag);
            }
            Op::SliceRows { a, start, len, cols, total_rows } => {
                let mut ag = vec![0.0; total_rows * cols];
                ag[start * cols..(start + len) * cols].copy_from_slice(g);
                add_to(by_node, *a, ag);
            }
            Op::SliceCols { a, start, len, rows, total_cols } => {
                let mut ag = vec![0.0; rows * total_cols];
                for i in 0..*rows {
                    for j in 0..*len {
                        ag[i * total_cols + start + j] = g[i * len + j];
                    }
                }
                add_to(by_node, *a, ag);
            }
            Op::ConcatRows { parts, cols } => {
                let mut off = 0;
                for (p, r) in parts {
                    add_to(by_node, *p, g[off * cols..(off + r) * cols].to_vec());
                    off += r;
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|(_, w)| w).sum();
                let mut off = 0;
                for (p, w) in parts {
                    let mut pg = vec![0.0; rows * w];
                    for i in 0..*rows {
                        pg[i * w..(i + 1) * w]
                            .copy_from_slice(&g[i * total + off..i * total + off + w]);
                    }
                    add_to(by_node, *p, pg);
                    off += w;
                }
            }
            Op::MaskedSoftmax { a, mask } => {
                let w = self.value(Var(idx)).data();
                let (r, c) = self.value(*a).rows_cols();
                let mut ag = vec![0.0; r * c];
                for i in 0..r {
                    let wr = &w[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let dot: f64 = wr.iter().zip(gr).map(|(&wv, &gv)| wv * gv).sum();
                    for j in 0..c {
                        if mask.allowed(i, j) {
                            ag[i * c + j] = wr[j] * (gr[j] - dot);
                        }
                    }
                }
                add_to(by_node, *a, ag);
            }
            Op::LayerNormRows { a, inv_std } => {
                let y = self.value(Var(idx)).data();
                let (r, c) = self.value(*a).rows_cols();
                let mut ag = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &y[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let gmean = gr.iter().sum::<f64>() / c as f64;
                    let gy = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum::<f64>() / c as f64;
                    for j in 0..c {
                        ag[i * c + j] = inv_std[i] * (gr[j] - gmean - yr[j] * gy);
                    }
                }
                add_to(by_node, *a, ag);
            }
            Op::Gelu { a } => {
                let av = self.value(*a).data();
                add_to(
                    by_node,
                    *a,
                    g.iter().zip(av).map(|(&gv, &x)| gv * gelu_grad(x)).collect(),
                );
            }
            Op::MeanAll { a } => {
                let n = self.value(*a).len();
                let s = g[0] / n as f64;
                add_to(by_node, *a, vec![s; n]);
            }
            Op::Mse { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let n = av.len() as f64;
                let s = 2.0 * g[0] / n;
                let d: Vec<f64> = av.iter().zip(bv).map(|(&x, &y)| s * (x - y)).collect();
                add_to(by_node, *a, d.clone());
                add_to(by_node, *b, d.iter().map(|&x| -x).collect());
            }
            Op::L1 { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let n = av.len() as f64;
                let s = g[0] / n;
                let d: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &y)| s * (x - y).signum() * if x == y { 0.0 } else { 1.0 })
                    .collect();
                add_to(by_node, *a, d.clone());
                add_to(by_node, *b, d.iter().map(|&x| -x).collect());
            }
            Op::SmoothL1 { a, b, beta } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let n = av.len() as f64;
                let s = g[0] / n;
                let d: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &y)| {
                        let r = x - y;
                        if r.abs() < *beta {
                            s * r / beta
                        } else {
                            s * r.signum()
                        }
                    })
                    .collect();
                add_to(by_node, *a, d.clone());
                add_to(by_node, *b, d.iter().map(|&x| -x).collect());
            }
            Op::GatherRows { table, indices, cols, table_rows } => {
                let mut tg = vec![0.0; table_rows * cols];
                for (pos, &idx) in indices.iter().enumerate() {
                    for j in 0..*cols {
                        tg[idx * cols + j] += g[pos * cols + j];
                    }
                }
                add_to(by_node, *table, tg);
            }
        }
    }

    /// Param ids of all parameter leaves on this tape, in registration order.
    pub fn param_leaves(&self) -> Vec<(ParamId, Var)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(id) } => Some((id, Var(i))),
                _ => None,
            })
            .collect()
    }
}

fn gelu_fwd(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + libm::tanh(C * (x + 0.044715 * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = libm::tanh(u);
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf2(tape: &mut Tape, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        tape.leaf(Tensor::new(vec![rows, cols], data).unwrap())
    }

    #[test]
    fn sum_of_inputs_has_unit_gradient() {
        let mut tape = Tape::new(Precision::F64);
        let x = leaf2(&mut tape, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let m = tape.mean_all(x);
        let s = tape.scale(m, 6.0); // sum
        let grads = tape.backward(s).unwrap();
        let gx = grads.of(&tape, x);
        assert!(gx.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new(Precision::F64);
        let x = leaf2(&mut tape, 1, 2, vec![1.0, 2.0]);
        let y = leaf2(&mut tape, 1, 2, vec![3.0, 4.0]);
        let loss = tape.mean_all(x);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.is_zero(y));
        assert!(!grads.is_zero(x));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new(Precision::F64);
        let x = leaf2(&mut tape, 1, 2, vec![1.0, 2.0]);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new(Precision::F64);
        let x = leaf2(&mut tape, 1, 2, vec![1.0, 2.0]);
        let d = tape.detach(x);
        let y = leaf2(&mut tape, 1, 2, vec![0.0, 0.0]);
        let loss = tape.mse(d, y);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.is_zero(x));
        assert!(!grads.is_zero(y));
    }

    #[test]
    fn loss_values_match_definitions() {
        let mut tape = Tape::new(Precision::F64);
        let a = leaf2(&mut tape, 1, 4, vec![0.5, 0.5, 0.5, 0.5]);
        let b = leaf2(&mut tape, 1, 4, vec![0.0, 0.0, 0.0, 0.0]);
        let sl = tape.smooth_l1(a, b, 1.0);
        assert!((tape.value(sl).item() - 0.125).abs() < 1e-15);
        let c = leaf2(&mut tape, 1, 2, vec![2.0, -2.0]);
        let d = leaf2(&mut tape, 1, 2, vec![0.0, 0.0]);
        let l1 = tape.l1(c, d);
        assert!((tape.value(l1).item() - 2.0).abs() < 1e-15);
        let eq = tape.mse(a, a);
        assert_eq!(tape.value(eq).item(), 0.0);
    }

    #[test]
    fn masked_softmax_rows_sum_to_one_and_masked_zero() {
        let mut tape = Tape::new(Precision::F64);
        let logits = leaf2(&mut tape, 3, 3, vec![0.3, -1.0, 2.0, 0.0, 0.5, 1.5, -2.0, 0.1, 0.2]);
        let mask = Arc::new(MaskMatrix::causal(3));
        let w = tape.masked_softmax(logits, mask.clone());
        let wv = tape.value(w);
        for i in 0..3 {
            let row = &wv.data()[i * 3..(i + 1) * 3];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row {i} sums to {sum}");
            for j in 0..3 {
                if !mask.allowed(i, j) {
                    assert_eq!(row[j], 0.0, "masked weight must be exactly zero");
                }
            }
        }
    }

    #[test]
    fn matmul_gradient_matches_manual() {
        // loss = mean(A.B), dA = d(loss)/dA known analytically
        let mut tape = Tape::new(Precision::F64);
        let a = leaf2(&mut tape, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = leaf2(&mut tape, 2, 2, vec![5.0, 6.0, 7.0, 8.0]);
        let c = tape.matmul(a, b);
        let loss = tape.mean_all(c);
        let grads = tape.backward(loss).unwrap();
        // d mean / dC = 1/4; dA = (1/4) * ones(2,2) . B^T
        let ga = grads.of(&tape, a);
        let expect = [
            (5.0 + 6.0) / 4.0,
            (7.0 + 8.0) / 4.0,
            (5.0 + 6.0) / 4.0,
            (7.0 + 8.0) / 4.0,
        ];
        for (g, e) in ga.data().iter().zip(expect) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn layer_norm_rows_standardizes() {
        let mut tape = Tape::new(Precision::F64);
        let x = leaf2(&mut tape, 1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        let y = tape.layer_norm_rows(x, 1e-8);
        let yv = tape.value(y);
        let mean: f64 = yv.data().iter().sum::<f64>() / 4.0;
        let var: f64 = yv.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn f32_mode_rounds_outputs() {
        let mut tape = Tape::new(Precision::F32);
        let x = leaf2(&mut tape, 1, 1, vec![0.1]);
        let y = tape.scale(x, 3.0);
        let v = tape.value(y).item();
        assert_eq!(v, v as f32 as f64);
    }
}
