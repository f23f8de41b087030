//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each recorded op appends
//! a node whose inputs are earlier nodes, so the node order is already a
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! Leaf gradients persist across `backward` calls and accumulate until
//! [`Tape::zero_grad`]; gradients of intermediate nodes are scratch.

use super::kernels::{softmax_in_place, standardize_in_place};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Relu(Var),
    Sum(Var),
    Gather {
        table: Var,
        index: Vec<usize>,
    },
    ConcatCols(Var, Var),
    SegmentDot {
        query: Var,
        keys: Var,
        scale: f64,
    },
    Softmax {
        x: Var,
        inv_temp: Vec<f64>,
    },
    SegmentWeightedSum {
        weights: Var,
        values: Var,
    },
    Standardize {
        x: Var,
        eps: f64,
        std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph plus leaf gradients.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Moves a value out of the tape, leaving an empty tensor behind.
    ///
    /// Meant for handing parameters back after `backward`; the node must not
    /// be used by later operations.
    pub fn take(&mut self, v: Var) -> Tensor {
        std::mem::take(&mut self.nodes[v.0].value)
    }

    /// Accumulated gradient of a trainable leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs = self.needs(inputs);
        self.push(value, op, needs)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.record(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("add", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.record(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("mul", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.record(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.record(value, Op::Scale(a, c), &[a])
    }

    /// `x + b` with the vector `b` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        if self.value(b).len() != n {
            return Err(Error::shape("add_row", self.value(x).shape(), self.value(b).shape()));
        }
        let bias = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for r in 0..m {
            for (v, bb) in data[r * n..(r + 1) * n].iter_mut().zip(bias) {
                *v += bb;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.record(value, Op::AddRow(x, b), &[x, b]))
    }

    /// `x ⊙ g` with the vector `g` broadcast over rows.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        if self.value(g).len() != n {
            return Err(Error::shape("mul_row", self.value(x).shape(), self.value(g).shape()));
        }
        let gain = self.value(g).data();
        let mut data = self.value(x).data().to_vec();
        for r in 0..m {
            for (v, gg) in data[r * n..(r + 1) * n].iter_mut().zip(gain) {
                *v *= gg;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.record(value, Op::MulRow(x, g), &[x, g]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.record(value, Op::Relu(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.record(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Rows of `table` selected by `index` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = t.dims2();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(Error::Contract(format!(
                    "gather index {i} out of range for {rows} rows"
                )));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::new(vec![index.len(), cols], data)?;
        Ok(self.record(
            value,
            Op::Gather {
                table,
                index: index.to_vec(),
            },
            &[table],
        ))
    }

    /// `[a ‖ b]` along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, na) = self.value(a).dims2();
        let (mb, nb) = self.value(b).dims2();
        if ma != mb {
            return Err(Error::shape("concat_cols", self.value(a).shape(), self.value(b).shape()));
        }
        let (x, y) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(ma * (na + nb));
        for r in 0..ma {
            data.extend_from_slice(x.row_slice(r));
            data.extend_from_slice(y.row_slice(r));
        }
        let value = Tensor::new(vec![ma, na + nb], data)?;
        Ok(self.record(value, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Per-example query/key scores.
    ///
    /// `query` is `B×D`, `keys` is `(B·N)×D` with example `b` owning rows
    /// `b·N..(b+1)·N`. Output `[b, n] = scale · ⟨query_b, key_{b,n}⟩`, shape `B×N`.
    pub fn segment_dot(&mut self, query: Var, keys: Var, scale: f64) -> Result<Var> {
        let (b, d) = self.value(query).dims2();
        let (bn, dk) = self.value(keys).dims2();
        if d != dk || b == 0 || bn % b != 0 {
            return Err(Error::shape("segment_dot", self.value(query).shape(), self.value(keys).shape()));
        }
        let n = bn / b;
        let (q, k) = (self.value(query), self.value(keys));
        let mut data = vec![0.0; b * n];
        for e in 0..b {
            let qr = q.row_slice(e);
            for i in 0..n {
                data[e * n + i] = scale * dot(qr, k.row_slice(e * n + i));
            }
        }
        let value = Tensor::new(vec![b, n], data)?;
        Ok(self.record(value, Op::SegmentDot { query, keys, scale }, &[query, keys]))
    }

    /// Row softmax with one inverse temperature for all rows.
    pub fn softmax_rows(&mut self, x: Var, inv_temp: f64) -> Result<Var> {
        let rows = self.value(x).rows();
        self.softmax_rows_with(x, vec![inv_temp; rows])
    }

    /// Row softmax with a per-row inverse temperature.
    pub fn softmax_rows_with(&mut self, x: Var, inv_temp: Vec<f64>) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2();
        if inv_temp.len() != m {
            return Err(Error::shape("softmax_rows", t.shape(), &[inv_temp.len()]));
        }
        if let Some(bad) = inv_temp.iter().find(|&&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::Contract(format!("inverse temperature must be > 0, got {bad}")));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("softmax_rows"));
        }
        let mut data = t.data().to_vec();
        for (r, &beta) in inv_temp.iter().enumerate() {
            softmax_in_place(&mut data[r * n..(r + 1) * n], beta);
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.record(value, Op::Softmax { x, inv_temp }, &[x]))
    }

    /// `out_b = Σ_n weights[b, n] · values_{b,n}`; weights `B×N`, values `(B·N)×D`.
    pub fn segment_weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var> {
        let (b, n) = self.value(weights).dims2();
        let (bn, d) = self.value(values).dims2();
        if bn != b * n {
            return Err(Error::shape(
                "segment_weighted_sum",
                self.value(weights).shape(),
                self.value(values).shape(),
            ));
        }
        let (w, v) = (self.value(weights), self.value(values));
        let mut data = vec![0.0; b * d];
        for e in 0..b {
            let out = &mut data[e * d..(e + 1) * d];
            for i in 0..n {
                axpy(w.get(e, i), v.row_slice(e * n + i), out);
            }
        }
        let value = Tensor::new(vec![b, d], data)?;
        Ok(self.record(value, Op::SegmentWeightedSum { weights, values }, &[weights, values]))
    }

    /// Per-row `(x − μ)/(σ + ε)` across columns.
    pub fn standardize_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.value(x).dims2();
        if n < 2 {
            return Err(Error::DegenerateWidth(n));
        }
        let mut data = self.value(x).data().to_vec();
        let std = (0..m)
            .map(|r| standardize_in_place(&mut data[r * n..(r + 1) * n], eps))
            .collect();
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.record(value, Op::Standardize { x, eps, std }, &[x]))
    }

    /// Mean softmax cross-entropy of `logits` (B×C) against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (b, c) = t.dims2();
        if targets.len() != b {
            return Err(Error::shape("cross_entropy", t.shape(), &[targets.len()]));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("cross_entropy"));
        }
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for (r, &y) in targets.iter().enumerate() {
            if y >= c {
                return Err(Error::Contract(format!("target {y} out of range for {c} classes")));
            }
            let row = &t.data()[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            softmax_in_place(&mut probs[r * c..(r + 1) * c], 1.0);
        }
        let value = Tensor::scalar(loss / b as f64);
        Ok(self.record(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut work: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        work[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = work[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                match &mut self.grads[id] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            } else {
                self.propagate(&node.op, &node.value, &g, &mut work);
            }
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], work: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).cols();
                if let Some(ga) = self.slot(*a, work) {
                    // dA = G·Bᵀ
                    gemm(m, n, k, g, false, self.value(*b).data(), true, ga, 1.0);
                }
                if let Some(gb) = self.slot(*b, work) {
                    // dB = Aᵀ·G
                    gemm(k, m, n, self.value(*a).data(), true, g, false, gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.slot(*v, work) {
                        axpy(1.0, g, gv);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.slot(*a, work) {
                    for ((x, gg), y) in ga.iter_mut().zip(g).zip(self.value(*b).data()) {
                        *x += gg * y;
                    }
                }
                if let Some(gb) = self.slot(*b, work) {
                    for ((x, gg), y) in gb.iter_mut().zip(g).zip(self.value(*a).data()) {
                        *x += gg * y;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(*a, work) {
                    axpy(*c, g, ga);
                }
            }
            Op::AddRow(x, b) => {
                let n = out.cols();
                if let Some(gx) = self.slot(*x, work) {
                    axpy(1.0, g, gx);
                }
                if let Some(gb) = self.slot(*b, work) {
                    for row in g.chunks_exact(n) {
                        axpy(1.0, row, gb);
                    }
                }
            }
            Op::MulRow(x, gain) => {
                let n = out.cols();
                let xs = self.value(*x).data();
                let gs = self.value(*gain).data();
                if let Some(gx) = self.slot(*x, work) {
                    for (grow, orow) in gx.chunks_exact_mut(n).zip(g.chunks_exact(n)) {
                        for ((a, gg), s) in grow.iter_mut().zip(orow).zip(gs) {
                            *a += gg * s;
                        }
                    }
                }
                if let Some(ggain) = self.slot(*gain, work) {
                    for (orow, xrow) in g.chunks_exact(n).zip(xs.chunks_exact(n)) {
                        for ((a, gg), xv) in ggain.iter_mut().zip(orow).zip(xrow) {
                            *a += gg * xv;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = self.slot(*x, work) {
                    for ((a, gg), o) in gx.iter_mut().zip(g).zip(out.data()) {
                        if *o > 0.0 {
                            *a += gg;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.slot(*x, work) {
                    gx.iter_mut().for_each(|a| *a += g[0]);
                }
            }
            Op::Gather { table, index } => {
                let cols = out.cols();
                if let Some(gt) = self.slot(*table, work) {
                    for (row, &i) in g.chunks_exact(cols).zip(index) {
                        axpy(1.0, row, &mut gt[i * cols..(i + 1) * cols]);
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let na = self.value(*a).cols();
                let nb = self.value(*b).cols();
                if let Some(ga) = self.slot(*a, work) {
                    for (dst, src) in ga.chunks_exact_mut(na).zip(g.chunks_exact(na + nb)) {
                        axpy(1.0, &src[..na], dst);
                    }
                }
                if let Some(gb) = self.slot(*b, work) {
                    for (dst, src) in gb.chunks_exact_mut(nb).zip(g.chunks_exact(na + nb)) {
                        axpy(1.0, &src[na..], dst);
                    }
                }
            }
            Op::SegmentDot { query, keys, scale } => {
                let (b, n) = out.dims2();
                let d = self.value(*query).cols();
                let q = self.value(*query);
                let k = self.value(*keys);
                if let Some(gq) = self.slot(*query, work) {
                    for e in 0..b {
                        let dst = &mut gq[e * d..(e + 1) * d];
                        for i in 0..n {
                            axpy(scale * g[e * n + i], k.row_slice(e * n + i), dst);
                        }
                    }
                }
                if let Some(gk) = self.slot(*keys, work) {
                    for e in 0..b {
                        for i in 0..n {
                            let r = e * n + i;
                            axpy(scale * g[r], q.row_slice(e), &mut gk[r * d..(r + 1) * d]);
                        }
                    }
                }
            }
            Op::Softmax { x, inv_temp } => {
                let n = out.cols();
                if let Some(gx) = self.slot(*x, work) {
                    for (r, beta) in inv_temp.iter().enumerate() {
                        let y = out.row_slice(r);
                        let gy = &g[r * n..(r + 1) * n];
                        let inner: f64 = dot(y, gy);
                        for ((a, yy), gg) in gx[r * n..(r + 1) * n].iter_mut().zip(y).zip(gy) {
                            *a += beta * yy * (gg - inner);
                        }
                    }
                }
            }
            Op::SegmentWeightedSum { weights, values } => {
                let (b, n) = self.value(*weights).dims2();
                let d = out.cols();
                let w = self.value(*weights);
                let v = self.value(*values);
                if let Some(gw) = self.slot(*weights, work) {
                    for e in 0..b {
                        let ge = &g[e * d..(e + 1) * d];
                        for i in 0..n {
                            gw[e * n + i] += dot(ge, v.row_slice(e * n + i));
                        }
                    }
                }
                if let Some(gv) = self.slot(*values, work) {
                    for e in 0..b {
                        let ge = &g[e * d..(e + 1) * d];
                        for i in 0..n {
                            let r = e * n + i;
                            axpy(w.get(e, i), ge, &mut gv[r * d..(r + 1) * d]);
                        }
                    }
                }
            }
            Op::Standardize { x, eps, std } => {
                let n = out.cols();
                let nf = n as f64;
                if let Some(gx) = self.slot(*x, work) {
                    for (r, &sigma) in std.iter().enumerate() {
                        let denom = sigma + eps;
                        if denom <= 0.0 {
                            continue;
                        }
                        let y = out.row_slice(r);
                        let gy = &g[r * n..(r + 1) * n];
                        let mean_g = gy.iter().sum::<f64>() / nf;
                        // centered = y·(σ+ε); Σ gy·centered = (σ+ε)·Σ gy·y
                        let proj = if sigma > 0.0 {
                            dot(gy, y) / (nf * sigma)
                        } else {
                            0.0
                        };
                        for ((a, gg), yy) in gx[r * n..(r + 1) * n].iter_mut().zip(gy).zip(y) {
                            *a += (gg - mean_g) / denom - yy * proj;
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.value(*logits).cols();
                let scale = g[0] / targets.len() as f64;
                if let Some(gl) = self.slot(*logits, work) {
                    for (r, &y) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
        }
    }

    /// Gradient buffer for `v` if it needs one, zero-initialized on first use.
    fn slot<'w>(&self, v: Var, work: &'w mut [Option<Vec<f64>>]) -> Option<&'w mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(work[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yy, xx) in y.iter_mut().zip(x) {
        *yy += alpha * xx;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row(&[1.0, -2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row(&[1.0, 2.0]));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn constant_loss_gives_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row(&[1.0, 2.0]));
        let z = tape.scale(x, 0.0);
        let c = tape.sum(z);
        tape.backward(c).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[vec![0.3, -1.2, 2.0], vec![1.0, 1.0, 0.0]]));
        let p = tape.softmax_rows(x, 1.3).unwrap();
        let loss = tape.sum(p);
        tape.backward(loss).unwrap();
        assert!(tape.grad(x).unwrap().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_rejects_bad_input() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[f64::NAN, 0.0]));
        assert!(matches!(tape.softmax_rows(x, 1.0), Err(Error::NonFinite(_))));
        let y = tape.constant(Tensor::row(&[1.0, 0.0]));
        assert!(matches!(tape.softmax_rows(y, 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn standardize_needs_two_features() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[1.0]));
        assert!(matches!(tape.standardize_rows(x, 1e-5), Err(Error::DegenerateWidth(1))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::row(&[1.0, 2.0]));
        let x = tape.param(Tensor::row(&[3.0, 4.0]));
        let p = tape.mul(c, x).unwrap();
        let loss = tape.sum(p);
        tape.backward(loss).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 2.0]);
    }
}
