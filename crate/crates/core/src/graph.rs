//! Reverse-mode differentiation over a linear tape.
//!
//! Every value produced during a forward pass is appended to the tape together
//! with the operation that made it. [`Graph::backward`] walks the tape in
//! reverse and accumulates vector-Jacobian products. Tensors are treated as
//! matrices whose last axis is the column axis.

use crate::error::{Error, Result};
use crate::ops::{self, dot, normalize_row, sigmoid_scalar};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

/// Smallest probability fed to `log` inside the focal loss.
pub const FOCAL_P_MIN: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    GroupMean {
        x: Var,
        groups: Vec<Vec<usize>>,
    },
    Attend {
        q: Var,
        k: Var,
        v: Var,
        index: Vec<Vec<usize>>,
        scale: f64,
        weights: Vec<Vec<f64>>,
    },
    FocalSum {
        p: Var,
        targets: Vec<bool>,
        mask: Vec<bool>,
        cfg: FocalParams,
    },
    SumScalars(Vec<Var>),
    SumAll(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Forward tape. Build one per forward pass; drop it afterwards.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by tape position.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut t = store.get(id).value.clone();
        t.zero_grad();
        self.push(t, Op::Param(id))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = ops::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
            .expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.map(a, |x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid_scalar);
        self.push(out, Op::Sigmoid(a))
    }

    /// Softmax along the last axis.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let axis = t.shape().len().saturating_sub(1);
        let out = ops::softmax(t, axis)?;
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let out = ops::layer_norm(tx, tg, tb, eps)?;
        let mut xhat = Vec::with_capacity(tx.len());
        let mut inv_std = Vec::with_capacity(tx.rows());
        for r in 0..tx.rows() {
            let (h, s) = normalize_row(tx.row(r), eps);
            xhat.extend(h);
            inv_std.push(s);
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Selects rows (with repetition) into a new `[idx.len() × cols]` matrix.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Dimension(format!(
                "gather_rows: index {bad} out of range for {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![idx.len(), cols], data)?;
        Ok(self.push(out, Op::GatherRows { x, idx }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(Error::Dimension(format!(
                "concat_cols: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (ca, cb) = (ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(ta.rows() * (ca + cb));
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let out = Tensor::new(vec![ta.rows(), ca + cb], data)?;
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: Vec<Var>, cols: usize) -> Result<Var> {
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in &parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::Dimension(format!(
                    "concat_rows: part {:?} does not have {cols} columns",
                    t.shape()
                )));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts)))
    }

    /// Output row `g` is the mean of the input rows listed in `groups[g]`.
    pub fn group_mean(&mut self, x: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
        let t = self.value(x);
        let cols = t.cols();
        let mut data = vec![0.0; groups.len() * cols];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() || members.iter().any(|&i| i >= t.rows()) {
                return Err(Error::Dimension(format!(
                    "group_mean: bad group {members:?} for {} rows",
                    t.rows()
                )));
            }
            let inv = 1.0 / members.len() as f64;
            for &i in members {
                for (o, v) in data[g * cols..(g + 1) * cols].iter_mut().zip(t.row(i)) {
                    *o += v * inv;
                }
            }
        }
        let out = Tensor::new(vec![groups.len(), cols], data)?;
        Ok(self.push(out, Op::GroupMean { x, groups }))
    }

    /// Sparse dot-product attention: output row `i` is
    /// `Σ_p α[i][p] · v[index[i][p]]` with `α[i] = softmax_p(scale · q[i]·k[index[i][p]])`.
    pub fn attend(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        index: Vec<Vec<usize>>,
        scale: f64,
    ) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.cols() != tk.cols() || tk.rows() != tv.rows() || index.len() != tq.rows() {
            return Err(Error::Dimension(format!(
                "attend: q {:?}, k {:?}, v {:?}, {} index rows",
                tq.shape(),
                tk.shape(),
                tv.shape(),
                index.len()
            )));
        }
        let dv = tv.cols();
        let mut weights = Vec::with_capacity(index.len());
        let mut out = vec![0.0; index.len() * dv];
        for (i, positions) in index.iter().enumerate() {
            if positions.is_empty() || positions.iter().any(|&p| p >= tk.rows()) {
                return Err(Error::Dimension(format!(
                    "attend: row {i} has invalid positions {positions:?}"
                )));
            }
            let scores: Vec<f64> = positions
                .iter()
                .map(|&p| scale * dot(tq.row(i), tk.row(p)))
                .collect();
            let alpha = ops::softmax_slice(&scores);
            for (&p, &a) in positions.iter().zip(&alpha) {
                for (o, x) in out[i * dv..(i + 1) * dv].iter_mut().zip(tv.row(p)) {
                    *o += a * x;
                }
            }
            weights.push(alpha);
        }
        let out = Tensor::new(vec![index.len(), dv], out)?;
        Ok(self.push(
            out,
            Op::Attend {
                q,
                k,
                v,
                index,
                scale,
                weights,
            },
        ))
    }

    /// Attention weights recorded by an [`Graph::attend`] node.
    pub fn attention_weights(&self, v: Var) -> Option<&[Vec<f64>]> {
        match &self.nodes[v.0].op {
            Op::Attend { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Sum of focal losses over masked slots of a probability tensor.
    /// A slot with target `true` scores `p̃ = p`, otherwise `p̃ = 1 - p`.
    pub fn focal_sum(
        &mut self,
        p: Var,
        targets: Vec<bool>,
        mask: Vec<bool>,
        cfg: FocalParams,
    ) -> Result<Var> {
        let tp = self.value(p);
        if targets.len() != tp.len() || mask.len() != tp.len() {
            return Err(Error::Dimension(format!(
                "focal_sum: {} probabilities, {} targets, {} mask entries",
                tp.len(),
                targets.len(),
                mask.len()
            )));
        }
        let mut total = 0.0;
        for ((&prob, &t), &m) in tp.data().iter().zip(&targets).zip(&mask) {
            if m {
                total += focal_term(if t { prob } else { 1.0 - prob }, cfg);
            }
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::FocalSum {
                p,
                targets,
                mask,
                cfg,
            },
        ))
    }

    pub fn sum_scalars(&mut self, parts: Vec<Var>) -> Result<Var> {
        let mut total = 0.0;
        for &p in &parts {
            let t = self.value(p);
            if t.len() != 1 {
                return Err(Error::Dimension(format!(
                    "sum_scalars: {:?} is not a scalar",
                    t.shape()
                )));
            }
            total += t.data()[0];
        }
        Ok(self.push(Tensor::scalar(total), Op::SumScalars(parts)))
    }

    /// Sum of every element.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::SumAll(a))
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward from non-scalar {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            self.backprop_node(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    /// Adds each parameter leaf's gradient into the store's gradient slots.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, grads.grads[i].as_deref()) {
                store.get_mut(*id).value.accumulate_grad(g);
            }
        }
    }

    fn backprop_node(&self, idx: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (n, d_in, d_out) = (tx.rows(), tx.cols(), tw.shape()[0]);
                let mut gx = vec![0.0; n * d_in];
                let mut gw = vec![0.0; d_out * d_in];
                let mut gb = vec![0.0; d_out];
                for i in 0..n {
                    let xi = tx.row(i);
                    for o in 0..d_out {
                        let g = gy[i * d_out + o];
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        let wo = &tw.data()[o * d_in..(o + 1) * d_in];
                        for c in 0..d_in {
                            gx[i * d_in + c] += g * wo[c];
                            gw[o * d_in + c] += g * xi[c];
                        }
                    }
                }
                acc(grads, *x, &gx);
                acc(grads, *w, &gw);
                if let Some(b) = b {
                    acc(grads, *b, &gb);
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, gy);
                acc(grads, *b, gy);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let ga: Vec<f64> = gy.iter().zip(tb).map(|(g, v)| g * v).collect();
                let gb: Vec<f64> = gy.iter().zip(ta).map(|(g, v)| g * v).collect();
                acc(grads, *a, &ga);
                acc(grads, *b, &gb);
            }
            Op::Scale(a, c) => {
                let g: Vec<f64> = gy.iter().map(|g| g * c).collect();
                acc(grads, *a, &g);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let g: Vec<f64> = gy
                    .iter()
                    .zip(x)
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(grads, *a, &g);
            }
            Op::Sigmoid(a) => {
                let g: Vec<f64> = gy.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                acc(grads, *a, &g);
            }
            Op::SoftmaxRows(a) => {
                let cols = node.value.cols();
                let mut g = vec![0.0; y.len()];
                for r in 0..node.value.rows() {
                    let ys = &y[r * cols..(r + 1) * cols];
                    let gs = &gy[r * cols..(r + 1) * cols];
                    let inner = dot(ys, gs);
                    for c in 0..cols {
                        g[r * cols + c] = ys[c] * (gs[c] - inner);
                    }
                }
                acc(grads, *a, &g);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.cols();
                let gamma = self.value(*gain).data();
                let mut gx = vec![0.0; y.len()];
                let mut gg = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                for r in 0..node.value.rows() {
                    let h = &xhat[r * d..(r + 1) * d];
                    let g = &gy[r * d..(r + 1) * d];
                    let gh: Vec<f64> = g.iter().zip(gamma).map(|(a, b)| a * b).collect();
                    for c in 0..d {
                        gg[c] += g[c] * h[c];
                        gbias[c] += g[c];
                    }
                    let sum_gh: f64 = gh.iter().sum();
                    let sum_ghh = dot(&gh, h);
                    let k = inv_std[r] / d as f64;
                    for c in 0..d {
                        gx[r * d + c] = k * (d as f64 * gh[c] - sum_gh - h[c] * sum_ghh);
                    }
                }
                acc(grads, *x, &gx);
                acc(grads, *gain, &gg);
                acc(grads, *bias, &gbias);
            }
            Op::GatherRows { x, idx } => {
                let t = self.value(*x);
                let cols = t.cols();
                let mut g = vec![0.0; t.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..cols {
                        g[src * cols + c] += gy[r * cols + c];
                    }
                }
                acc(grads, *x, &g);
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                let rows = node.value.rows();
                let mut ga = Vec::with_capacity(rows * ca);
                let mut gb = Vec::with_capacity(rows * cb);
                for r in 0..rows {
                    let row = &gy[r * (ca + cb)..(r + 1) * (ca + cb)];
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                acc(grads, *a, &ga);
                acc(grads, *b, &gb);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(grads, p, &gy[offset..offset + n]);
                    offset += n;
                }
            }
            Op::GroupMean { x, groups } => {
                let t = self.value(*x);
                let cols = t.cols();
                let mut g = vec![0.0; t.len()];
                for (gi, members) in groups.iter().enumerate() {
                    let inv = 1.0 / members.len() as f64;
                    for &i in members {
                        for c in 0..cols {
                            g[i * cols + c] += gy[gi * cols + c] * inv;
                        }
                    }
                }
                acc(grads, *x, &g);
            }
            Op::Attend {
                q,
                k,
                v,
                index,
                scale,
                weights,
            } => {
                let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                let (dk, dv) = (tq.cols(), tv.cols());
                let mut gq = vec![0.0; tq.len()];
                let mut gk = vec![0.0; tk.len()];
                let mut gv = vec![0.0; tv.len()];
                for (i, (positions, alpha)) in index.iter().zip(weights).enumerate() {
                    let go = &gy[i * dv..(i + 1) * dv];
                    let galpha: Vec<f64> = positions.iter().map(|&p| dot(go, tv.row(p))).collect();
                    let inner = dot(alpha, &galpha);
                    for (pi, &p) in positions.iter().enumerate() {
                        for c in 0..dv {
                            gv[p * dv + c] += alpha[pi] * go[c];
                        }
                        let gs = alpha[pi] * (galpha[pi] - inner) * scale;
                        let (qi, kp) = (tq.row(i), tk.row(p));
                        for c in 0..dk {
                            gq[i * dk + c] += gs * kp[c];
                            gk[p * dk + c] += gs * qi[c];
                        }
                    }
                }
                acc(grads, *q, &gq);
                acc(grads, *k, &gk);
                acc(grads, *v, &gv);
            }
            Op::FocalSum {
                p,
                targets,
                mask,
                cfg,
            } => {
                let tp = self.value(*p).data();
                let g: Vec<f64> = tp
                    .iter()
                    .zip(targets)
                    .zip(mask)
                    .map(|((&prob, &t), &m)| {
                        if !m {
                            return 0.0;
                        }
                        if t {
                            gy[0] * focal_term_grad(prob, *cfg)
                        } else {
                            -gy[0] * focal_term_grad(1.0 - prob, *cfg)
                        }
                    })
                    .collect();
                acc(grads, *p, &g);
            }
            Op::SumScalars(parts) => {
                for &p in parts {
                    acc(grads, p, gy);
                }
            }
            Op::SumAll(a) => {
                let g = vec![gy[0]; self.value(*a).len()];
                acc(grads, *a, &g);
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// `-α (1 - p̃)^γ log p̃` with `p̃` clamped to at least [`FOCAL_P_MIN`].
pub fn focal_term(p_true: f64, cfg: FocalParams) -> f64 {
    let p = p_true.clamp(FOCAL_P_MIN, 1.0);
    let loss = -cfg.alpha * (1.0 - p).powf(cfg.gamma) * p.ln();
    // -0.0 at p = 1
    loss + 0.0
}

/// Derivative of [`focal_term`] with respect to `p̃`.
pub fn focal_term_grad(p_true: f64, cfg: FocalParams) -> f64 {
    if p_true < FOCAL_P_MIN {
        return 0.0;
    }
    let p = p_true.min(1.0);
    let one_minus = 1.0 - p;
    let mut d = -cfg.alpha * one_minus.powf(cfg.gamma) / p;
    if cfg.gamma != 0.0 && one_minus > 0.0 {
        d += cfg.alpha * cfg.gamma * one_minus.powf(cfg.gamma - 1.0) * p.ln();
    }
    d
}
