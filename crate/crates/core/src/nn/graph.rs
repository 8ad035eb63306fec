//! Tape-based reverse-mode differentiation over 2-D row-major activations.
//!
//! Every node stores its forward value; `backward` walks the tape in reverse
//! and accumulates parameter gradients into the owning [`ParamSet`].

use crate::error::NnError;
use crate::nn::tensor::{ParamSet, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Layout of a multi-head attention call.
#[derive(Debug, Clone)]
pub struct AttnGeom {
    pub batch: usize,
    pub len_q: usize,
    pub len_k: usize,
    pub heads: usize,
    /// `batch * len_k` flags, `true` for keys that may be attended.
    pub key_mask: Vec<bool>,
    pub causal: bool,
}

enum Op {
    Input,
    Param(usize),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Linear { x: Var, w: Var, b: Var, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    AddConst { x: Var },
    Scale { x: Var, c: f32 },
    Relu { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, cols: usize, xhat: Vec<f32>, rstd: Vec<f32> },
    Embedding { table: Var, ids: Vec<usize>, dim: usize },
    Softmax { x: Var, cols: usize },
    Attention { q: Var, k: Var, v: Var, geom: AttnGeom, probs: Vec<f32> },
    CrossEntropy { logits: Var, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<f32>, count: usize },
    PowerNorm { x: Var, row_mask: Vec<bool>, gain: f32, symbols: f32 },
    Sum { x: Var },
    WeightedSum { x: Var, weights: Vec<f32> },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    op: Op,
    requires_grad: bool,
}

pub const LAYER_NORM_EPS: f32 = 1e-5;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn shape_err(op: &'static str, detail: String) -> NnError {
    NnError::Shape { op, detail }
}

/// `c = beta * c + op(a) · op(b)` for logical `a: [m×k]`, `b: [k×n]`, `c: [m×n]`.
/// `a_t` / `b_t` mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, c: &mut [f32], beta: f32) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Scales the unmasked rows of `x` to unit mean complex-symbol power
/// (pairs of adjacent reals) and zeroes the masked rows. Returns the gain.
pub fn power_normalize(x: &[f32], cols: usize, row_mask: &[bool], out: &mut [f32]) -> (f32, f32) {
    let mut energy = 0f64;
    let mut rows = 0usize;
    for (r, &keep) in row_mask.iter().enumerate() {
        if keep {
            rows += 1;
            energy += x[r * cols..(r + 1) * cols].iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
        }
    }
    let symbols = (rows * cols) as f64 / 2.0;
    let gain = if energy > 0.0 { (symbols / energy).sqrt() } else { 0.0 };
    for (r, &keep) in row_mask.iter().enumerate() {
        let (src, dst) = (&x[r * cols..(r + 1) * cols], &mut out[r * cols..(r + 1) * cols]);
        if keep {
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d = (s as f64 * gain) as f32);
        } else {
            dst.fill(0.0);
        }
    }
    (gain as f32, symbols as f32)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.param_vars.clear();
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Sign pattern of every ReLU input recorded so far, in graph order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Relu { .. }))
            .flat_map(|n| n.value.iter().map(|&v| v > 0.0))
            .collect()
    }

    fn rows_cols(&self, v: Var) -> (usize, usize) {
        let s = &self.nodes[v.0].shape;
        match s.len() {
            0 => (1, 1),
            1 => (1, s[0]),
            _ => (s[..s.len() - 1].iter().product(), s[s.len() - 1]),
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant leaf.
    pub fn input(&mut self, shape: Vec<usize>, data: Vec<f32>) -> Result<Var, NnError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(shape_err("input", format!("shape {shape:?} vs {} values", data.len())));
        }
        Ok(self.push(shape, data, Op::Input, false))
    }

    /// Leaf bound to parameter `index` of `params`; repeated calls share one node.
    pub fn param(&mut self, params: &ParamSet, index: usize) -> Var {
        if self.param_vars.len() <= index {
            self.param_vars.resize(index + 1, None);
        }
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        let t = params.tensor(index);
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param(index), true);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.rows_cols(a);
        let (k2, n) = self.rows_cols(b);
        if k != k2 || self.shape(b).len() != 2 {
            return Err(shape_err("matmul", format!("{:?} x {:?}", self.shape(a), self.shape(b))));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// `x · w + b` with `w: [k×n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.rows_cols(x);
        let (k2, n) = self.rows_cols(w);
        if k != k2 || self.value(b).len() != n {
            return Err(shape_err(
                "linear",
                format!("{:?} x {:?} + {:?}", self.shape(x), self.shape(w), self.shape(b)),
            ));
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(self.value(b));
        }
        gemm(m, k, n, self.value(x), false, self.value(w), false, &mut out, 1.0);
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(vec![m, n], out, Op::Linear { x, w, b, m, k, n }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        if self.value(a).len() != self.value(b).len() {
            return Err(shape_err("add", format!("{:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a, b }, rg))
    }

    /// Adds a constant with no gradient path (channel noise, positional codes).
    /// Rows of `c` are broadcast when it is shorter than `x` by a whole factor.
    pub fn add_const(&mut self, x: Var, c: &[f32]) -> Result<Var, NnError> {
        let n = self.value(x).len();
        if c.is_empty() || !n.is_multiple_of(c.len()) {
            return Err(shape_err("add_const", format!("{} values + {}", n, c.len())));
        }
        let out = self.value(x).iter().zip(c.iter().cycle()).map(|(a, b)| a + b).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddConst { x }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Scale { x, c }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Relu { x }, rg)
    }

    /// Normalizes over the last dimension, then applies `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NnError> {
        let (rows, cols) = self.rows_cols(x);
        if self.value(gamma).len() != cols || self.value(beta).len() != cols {
            return Err(shape_err("layer_norm", format!("{:?} with gain {:?}", self.shape(x), self.shape(gamma))));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f32>() / cols as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / cols as f32;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::LayerNorm { x, gamma, beta, cols, xhat, rstd }, rg))
    }

    /// Gathers rows of `table: [V×D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NnError> {
        let (vocab, dim) = self.rows_cols(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(shape_err("embedding", format!("id {bad} >= vocabulary {vocab}")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(vec![ids.len(), dim], out, Op::Embedding { table, ids: ids.to_vec(), dim }, rg))
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (rows, cols) = self.rows_cols(x);
        let mut out = self.value(x).to_vec();
        for r in 0..rows {
            softmax_in_place(&mut out[r * cols..(r + 1) * cols]);
        }
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Softmax { x, cols }, rg)
    }

    /// Scaled dot-product attention over `heads` contiguous column blocks.
    /// `q: [batch·len_q × dim]`, `k, v: [batch·len_k × dim]`. Query rows
    /// with no admissible key produce zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, geom: AttnGeom) -> Result<Var, NnError> {
        let (rq, dim) = self.rows_cols(q);
        let (rk, dk) = self.rows_cols(k);
        let (rv, dv) = self.rows_cols(v);
        let AttnGeom { batch, len_q, len_k, heads, .. } = geom;
        if rq != batch * len_q
            || rk != batch * len_k
            || rv != rk
            || dk != dim
            || dv != dim
            || heads == 0
            || dim % heads != 0
            || geom.key_mask.len() != batch * len_k
        {
            return Err(shape_err(
                "attention",
                format!("q {:?} k {:?} v {:?} batch {batch} heads {heads}", self.shape(q), self.shape(k), self.shape(v)),
            ));
        }
        let dh = dim / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0f32; batch * heads * len_q * len_k];
        let mut out = vec![0.0f32; rq * dim];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..len_q {
                    let qrow = &qv[(b * len_q + i) * dim + h * dh..][..dh];
                    let p = &mut probs[((b * heads + h) * len_q + i) * len_k..][..len_k];
                    let mut max = f32::NEG_INFINITY;
                    for j in 0..len_k {
                        if geom.key_mask[b * len_k + j] && !(geom.causal && j > i) {
                            let krow = &kv[(b * len_k + j) * dim + h * dh..][..dh];
                            let s = scale * dot(qrow, krow);
                            p[j] = s;
                            max = max.max(s);
                        } else {
                            p[j] = f32::NEG_INFINITY;
                        }
                    }
                    if max == f32::NEG_INFINITY {
                        p.fill(0.0);
                        continue;
                    }
                    let mut z = 0.0;
                    for pj in p.iter_mut() {
                        *pj = if *pj == f32::NEG_INFINITY { 0.0 } else { (*pj - max).exp() };
                        z += *pj;
                    }
                    let o = &mut out[(b * len_q + i) * dim + h * dh..][..dh];
                    for (j, pj) in p.iter_mut().enumerate() {
                        *pj /= z;
                        if *pj != 0.0 {
                            let vrow = &vv[(b * len_k + j) * dim + h * dh..][..dh];
                            o.iter_mut().zip(vrow).for_each(|(o, &x)| *o += *pj * x);
                        }
                    }
                }
            }
        }
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(vec![rq, dim], out, Op::Attention { q, k, v, geom, probs }, rg))
    }

    /// Mean over unmasked rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var, NnError> {
        let (rows, vocab) = self.rows_cols(logits);
        if targets.len() != rows || mask.len() != rows {
            return Err(shape_err("cross_entropy", format!("{rows} rows, {} targets", targets.len())));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(NnError::EmptyBatch);
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0f32; rows * vocab];
        let mut total = 0f64;
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            let t = targets[r];
            if t >= vocab {
                return Err(shape_err("cross_entropy", format!("target {t} >= vocabulary {vocab}")));
            }
            let row = &lv[r * vocab..(r + 1) * vocab];
            let p = &mut probs[r * vocab..(r + 1) * vocab];
            p.copy_from_slice(row);
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let z: f64 = row.iter().map(|&x| ((x - max) as f64).exp()).sum();
            total += max as f64 + z.ln() - row[t] as f64;
            softmax_in_place(p);
        }
        let loss = (total / count as f64) as f32;
        if !loss.is_finite() {
            return Err(NnError::NonFinite("cross_entropy"));
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            vec![],
            vec![loss],
            Op::CrossEntropy { logits, targets: targets.to_vec(), mask: mask.to_vec(), probs, count },
            rg,
        ))
    }

    /// Batch power normalization to unit average complex-symbol power over
    /// the rows flagged in `row_mask`; masked rows become zero.
    pub fn power_norm(&mut self, x: Var, row_mask: &[bool]) -> Result<Var, NnError> {
        let (rows, cols) = self.rows_cols(x);
        if row_mask.len() != rows || cols % 2 != 0 {
            return Err(shape_err("power_norm", format!("{rows}x{cols} with {} mask rows", row_mask.len())));
        }
        let mut out = vec![0.0; rows * cols];
        let (gain, symbols) = power_normalize(self.value(x), cols, row_mask, &mut out);
        let rg = self.rg(&[x]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::PowerNorm { x, row_mask: row_mask.to_vec(), gain, symbols }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().map(|&v| v as f64).sum::<f64>() as f32;
        let rg = self.rg(&[x]);
        self.push(vec![], vec![s], Op::Sum { x }, rg)
    }

    /// `Σ x_i · w_i` for constant weights; turns any output into a scalar
    /// probe for Jacobian-vector checks.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f32]) -> Result<Var, NnError> {
        if weights.len() != self.value(x).len() {
            return Err(shape_err("weighted_sum", format!("{} weights for {:?}", weights.len(), self.shape(x))));
        }
        let s = self.value(x).iter().zip(weights).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() as f32;
        let rg = self.rg(&[x]);
        Ok(self.push(vec![], vec![s], Op::WeightedSum { x, weights: weights.to_vec() }, rg))
    }

    /// Populates `grad` of every tensor in `params` with ∂loss/∂p (zero when
    /// unreachable), then clears the tape.
    pub fn backward(&mut self, loss: Var, params: &mut ParamSet) -> Result<(), NnError> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(NnError::NoForward);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(shape_err("backward", format!("loss has shape {:?}", self.nodes[loss.0].shape)));
        }
        let nodes = std::mem::take(&mut self.nodes);
        self.param_vars.clear();
        let mut grads: Vec<Option<Vec<f32>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut acc = |v: Var, f: &dyn Fn(&mut [f32])| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
                f(buf);
            };
            match &node.op {
                Op::Input => {}
                Op::Param(idx) => {
                    let t = params.tensor_mut(*idx);
                    if t.numel() != g.len() {
                        return Err(shape_err("backward", format!("parameter {idx} changed shape")));
                    }
                    t.accumulate_grad(&g);
                }
                &Op::MatMul { a, b, m, k, n } => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(a, &|ga| gemm(m, n, k, &g, false, bv, true, ga, 1.0));
                    acc(b, &|gb| gemm(k, m, n, av, true, &g, false, gb, 1.0));
                }
                &Op::Linear { x, w, b, m, k, n } => {
                    let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                    acc(x, &|gx| gemm(m, n, k, &g, false, wv, true, gx, 1.0));
                    acc(w, &|gw| gemm(k, m, n, xv, true, &g, false, gw, 1.0));
                    acc(b, &|gb| {
                        for row in g.chunks_exact(n) {
                            gb.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                        }
                    });
                }
                &Op::Add { a, b } => {
                    acc(a, &|ga| add_into(ga, &g));
                    acc(b, &|gb| add_into(gb, &g));
                }
                &Op::AddConst { x } => acc(x, &|gx| add_into(gx, &g)),
                &Op::Scale { x, c } => acc(x, &|gx| gx.iter_mut().zip(&g).for_each(|(d, s)| *d += c * s)),
                &Op::Relu { x } => {
                    let xv = &nodes[x.0].value;
                    acc(x, &|gx| {
                        for ((d, s), &v) in gx.iter_mut().zip(&g).zip(xv) {
                            if v > 0.0 {
                                *d += s;
                            }
                        }
                    })
                }
                Op::LayerNorm { x, gamma, beta, cols, xhat, rstd } => {
                    let cols = *cols;
                    let gv = &nodes[gamma.0].value;
                    acc(*gamma, &|gg| {
                        for (grow, hrow) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                            gg.iter_mut().zip(grow.iter().zip(hrow)).for_each(|(d, (s, h))| *d += s * h);
                        }
                    });
                    acc(*beta, &|gb| {
                        for grow in g.chunks_exact(cols) {
                            add_into(gb, grow);
                        }
                    });
                    acc(*x, &|gx| {
                        for (r, (grow, hrow)) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)).enumerate() {
                            let mut mean_d = 0.0;
                            let mut mean_dh = 0.0;
                            for c in 0..cols {
                                let d = grow[c] * gv[c];
                                mean_d += d;
                                mean_dh += d * hrow[c];
                            }
                            mean_d /= cols as f32;
                            mean_dh /= cols as f32;
                            let out = &mut gx[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                out[c] += rstd[r] * (grow[c] * gv[c] - mean_d - hrow[c] * mean_dh);
                            }
                        }
                    });
                }
                Op::Embedding { table, ids, dim } => {
                    let dim = *dim;
                    acc(*table, &|gt| {
                        for (r, &id) in ids.iter().enumerate() {
                            add_into(&mut gt[id * dim..(id + 1) * dim], &g[r * dim..(r + 1) * dim]);
                        }
                    });
                }
                Op::Softmax { x, cols } => {
                    let y = &node.value;
                    acc(*x, &|gx| {
                        for ((d, s), yr) in gx.chunks_exact_mut(*cols).zip(g.chunks_exact(*cols)).zip(y.chunks_exact(*cols)) {
                            let inner = dot(s, yr);
                            for c in 0..*cols {
                                d[c] += yr[c] * (s[c] - inner);
                            }
                        }
                    });
                }
                Op::Attention { q, k, v, geom, probs } => {
                    let (gq, gk, gv) = attention_backward(&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value, geom, probs, &g);
                    acc(*q, &|d| add_into(d, &gq));
                    acc(*k, &|d| add_into(d, &gk));
                    acc(*v, &|d| add_into(d, &gv));
                }
                Op::CrossEntropy { logits, targets, mask, probs, count } => {
                    let vocab = nodes[logits.0].value.len() / targets.len();
                    let scale = g[0] / *count as f32;
                    acc(*logits, &|gl| {
                        for r in 0..targets.len() {
                            if !mask[r] {
                                continue;
                            }
                            let (d, p) = (&mut gl[r * vocab..(r + 1) * vocab], &probs[r * vocab..(r + 1) * vocab]);
                            d.iter_mut().zip(p).for_each(|(d, &p)| *d += scale * p);
                            d[targets[r]] -= scale;
                        }
                    });
                }
                Op::PowerNorm { x, row_mask, gain, symbols } => {
                    let xv = &nodes[x.0].value;
                    let cols = xv.len() / row_mask.len();
                    let mut proj = 0f64;
                    for (r, &keep) in row_mask.iter().enumerate() {
                        if keep {
                            proj += (r * cols..(r + 1) * cols).map(|i| g[i] as f64 * xv[i] as f64).sum::<f64>();
                        }
                    }
                    let coef = (*gain as f64).powi(3) / *symbols as f64 * proj;
                    acc(*x, &|gx| {
                        for (r, &keep) in row_mask.iter().enumerate() {
                            if keep {
                                for i in r * cols..(r + 1) * cols {
                                    gx[i] += (*gain as f64 * g[i] as f64 - coef * xv[i] as f64) as f32;
                                }
                            }
                        }
                    });
                }
                &Op::Sum { x } => acc(x, &|gx| gx.iter_mut().for_each(|d| *d += g[0])),
                Op::WeightedSum { x, weights } => {
                    acc(*x, &|gx| gx.iter_mut().zip(weights).for_each(|(d, w)| *d += g[0] * w))
                }
            }
        }
        for (_, t) in params.iter_mut() {
            if t.grad().is_none() {
                t.set_grad(vec![0.0; t.numel()]);
            }
        }
        Ok(())
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    row.iter_mut().for_each(|x| *x /= z);
}

fn attention_backward(
    qv: &[f32],
    kv: &[f32],
    vv: &[f32],
    geom: &AttnGeom,
    probs: &[f32],
    g: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let AttnGeom { batch, len_q, len_k, heads, .. } = *geom;
    let dim = qv.len() / (batch * len_q).max(1);
    let dh = dim / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut gq = vec![0.0; qv.len()];
    let mut gk = vec![0.0; kv.len()];
    let mut gv = vec![0.0; vv.len()];
    let mut dp = vec![0.0; len_k];
    for b in 0..batch {
        for h in 0..heads {
            for i in 0..len_q {
                let p = &probs[((b * heads + h) * len_q + i) * len_k..][..len_k];
                let qo = (b * len_q + i) * dim + h * dh;
                let go = &g[qo..qo + dh];
                let mut inner = 0.0;
                for j in 0..len_k {
                    if p[j] == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    let ko = (b * len_k + j) * dim + h * dh;
                    dp[j] = dot(go, &vv[ko..ko + dh]);
                    inner += p[j] * dp[j];
                    gv[ko..ko + dh].iter_mut().zip(go).for_each(|(d, &x)| *d += p[j] * x);
                }
                for j in 0..len_k {
                    if p[j] == 0.0 {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - inner) * scale;
                    let ko = (b * len_k + j) * dim + h * dh;
                    for c in 0..dh {
                        gq[qo + c] += ds * kv[ko + c];
                        gk[ko + c] += ds * qv[qo + c];
                    }
                }
            }
        }
    }
    (gq, gk, gv)
}

/// Convenience for tests and tools: a parameter set built from tensors.
pub fn params_from(tensors: Vec<(&str, Tensor)>) -> ParamSet {
    let mut p = ParamSet::new();
    for (n, t) in tensors {
        p.push(n, t).expect("unique names");
    }
    p
}
