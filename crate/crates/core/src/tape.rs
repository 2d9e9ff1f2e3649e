//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its value and the indices of its
//! inputs. Because inputs always exist before the node that consumes them,
//! the node vector is already in topological order and a single reverse sweep
//! from the loss visits each node exactly once.
//!
//! ```
//! use etnode_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.square(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(&tape, x).item(), 6.0);
//! ```

use crate::error::{Error, Result};
use crate::tensor::{axis_extents, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Square,
    Softplus,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
}

/// How an operand of a broadcasting binary op maps onto the output index.
#[derive(Clone, Copy, Debug)]
enum Bcast {
    Full,
    Scalar,
    /// `[1, n]` against `[m, n]`: operand index is `k % n`.
    Row(usize),
    /// `[m, 1]` against `[m, n]`: operand index is `k / n`.
    Col(usize),
}

impl Bcast {
    #[inline]
    fn index(self, k: usize) -> usize {
        match self {
            Bcast::Full => k,
            Bcast::Scalar => 0,
            Bcast::Row(n) => k % n,
            Bcast::Col(n) => k / n,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Binary(Binary, usize, usize, Bcast, Bcast),
    Scale(usize, f64),
    Shift(usize),
    Unary(Unary, usize),
    Softmax(usize, usize),
    SumAxis(usize, usize),
    SumAll(usize),
    Mean(usize),
    Concat(Vec<usize>, usize),
    Slice {
        src: usize,
        axis: usize,
        start: usize,
    },
    Reshape(usize),
    Affine(usize, usize, usize),
    BatchMatVec(usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recorded computation graph.
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A new empty tape. Non-finite op outputs are rejected in debug builds.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Overrides the post-op finiteness check.
    pub fn with_finite_checks(mut self, enabled: bool) -> Self {
        self.check_finite = enabled;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf: its gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// A constant leaf (inputs, targets, frozen noise).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::Numeric(name.to_string()));
        }
        let requires_grad = match &op {
            Op::Leaf => unreachable!("leaves are pushed through push_leaf"),
            Op::MatMul(a, b)
            | Op::Binary(_, a, b, _, _)
            | Op::BatchMatVec(a, b) => self.nodes[*a].requires_grad || self.nodes[*b].requires_grad,
            Op::Affine(a, b, c) => {
                self.nodes[*a].requires_grad
                    || self.nodes[*b].requires_grad
                    || self.nodes[*c].requires_grad
            }
            Op::Concat(parts, _) => parts.iter().any(|p| self.nodes[*p].requires_grad),
            Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Unary(_, a)
            | Op::Softmax(a, _)
            | Op::SumAxis(a, _)
            | Op::SumAll(a)
            | Op::Mean(a)
            | Op::Slice { src: a, .. }
            | Op::Reshape(a) => self.nodes[*a].requires_grad,
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ---- linear algebra -------------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let value = matmul_raw(self.value(a), self.value(b));
        self.push(value, Op::MatMul(a.0, b.0), "matmul")
    }

    /// `W x + b` with `W: [m, k]`, `x: [k, n]`, `b: [m, 1]` broadcast over columns.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let (sw, sx, sb) = (self.shape(w), self.shape(x), self.shape(b));
        if sw.len() != 2 || sx.len() != 2 || sw[1] != sx[0] {
            return Err(Error::shape("affine", sw, sx));
        }
        if sb != [sw[0], 1] {
            return Err(Error::shape("affine bias", sb, &[sw[0], 1]));
        }
        let mut value = matmul_raw(self.value(w), self.value(x));
        let n = sx[1];
        let bias = self.value(b).data();
        for (k, v) in value.data_mut().iter_mut().enumerate() {
            *v += bias[k / n];
        }
        self.push(value, Op::Affine(w.0, x.0, b.0), "affine")
    }

    /// Slice-wise matrix-vector product: `W: [P, d, e]`, `H: [P, e]` gives
    /// `out[p] = W[p] H[p]` of shape `[P, d]`. Rows never mix.
    pub fn batch_matvec(&mut self, w: Var, h: Var) -> Result<Var> {
        let (sw, sh) = (self.shape(w), self.shape(h));
        if sw.len() != 3 || sh.len() != 2 || sw[0] != sh[0] || sw[2] != sh[1] {
            return Err(Error::shape("batch_matvec", sw, sh));
        }
        let (p, d, e) = (sw[0], sw[1], sw[2]);
        let (wd, hd) = (self.value(w).data(), self.value(h).data());
        let mut out = vec![0.0; p * d];
        for n in 0..p {
            let hrow = &hd[n * e..(n + 1) * e];
            for i in 0..d {
                let wrow = &wd[(n * d + i) * e..(n * d + i + 1) * e];
                out[n * d + i] = wrow.iter().zip(hrow).map(|(a, b)| a * b).sum();
            }
        }
        self.push(
            Tensor::from_parts([p, d], out),
            Op::BatchMatVec(w.0, h.0),
            "batch_matvec",
        )
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    /// Elementwise (Hadamard) product with limited broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (out_shape, ba, bb) = broadcast(self.shape(a), self.shape(b))?;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let n: usize = out_shape.iter().product();
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let data = match (ba, bb) {
            (Bcast::Full, Bcast::Full) => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..n).map(|k| f(ad[ba.index(k)], bd[bb.index(k)])).collect(),
        };
        self.push(
            Tensor::from_parts(out_shape, data),
            Op::Binary(kind, a.0, b.0, ba, bb),
            "binary",
        )
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v * factor);
        self.push(value, Op::Scale(a.0, factor), "scale")
    }

    /// Addition of a constant scalar.
    pub fn shift(&mut self, a: Var, offset: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v + offset);
        self.push(value, Op::Shift(a.0), "shift")
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Square => |v| v * v,
            Unary::Softplus => softplus,
        };
        let value = self.value(a).map(f);
        self.push(value, Op::Unary(kind, a.0), "unary")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Square, a)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Softplus, a)
    }

    // ---- reductions and layout -----------------------------------------

    /// Softmax along `axis` with max-subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax axis", &shape, &[axis]));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |t: usize| (o * len + t) * inner + i;
                let max = (0..len).map(|t| src[at(t)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for t in 0..len {
                    let e = (src[at(t)] - max).exp();
                    out[at(t)] = e;
                    total += e;
                }
                for t in 0..len {
                    out[at(t)] /= total;
                }
            }
        }
        self.push(
            Tensor::from_parts(shape, out),
            Op::Softmax(a.0, axis),
            "softmax",
        )
    }

    /// Sum along `axis`, dropping it. A fully reduced result has shape `[1]`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", &shape, &[axis]));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for t in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += src[(o * len + t) * inner + i];
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        self.push(
            Tensor::from_parts(out_shape, out),
            Op::SumAxis(a.0, axis),
            "sum_axis",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::SumAll(a.0), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a.0), "mean")
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::contract("concat of zero tensors"));
        };
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat axis", &base, &[axis]));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(k, (x, y))| k == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_extents(&out_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let len = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let ids = parts.iter().map(|p| p.0).collect();
        self.push(
            Tensor::from_parts(out_shape, out),
            Op::Concat(ids, axis),
            "concat",
        )
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("slice", &shape, &[axis, start, len]));
        }
        let (outer, full, inner) = axis_extents(&shape, axis);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push(
            Tensor::from_parts(out_shape, out),
            Op::Slice {
                src: a.0,
                axis,
                start,
            },
            "slice",
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape)?;
        self.push(value, Op::Reshape(a.0), "reshape")
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(id);
            let Some(g) = upper[0].as_ref() else {
                continue;
            };
            self.propagate(node, g.data(), lower);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Tensor>]) {
        let out = node.value.data();
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                self.acc(grads, a, |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for p in 0..k {
                                ga[i * k + p] += gij * bv.data()[p * n + j];
                            }
                        }
                    }
                });
                self.acc(grads, b, |gb| {
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av.data()[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Affine(w, x, b) => {
                let (wv, xv) = (&self.nodes[w].value, &self.nodes[x].value);
                let (m, k, n) = (wv.shape()[0], wv.shape()[1], xv.shape()[1]);
                self.acc(grads, w, |gw| {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for p in 0..k {
                                gw[i * k + p] += gij * xv.data()[p * n + j];
                            }
                        }
                    }
                });
                self.acc(grads, x, |gx| {
                    for i in 0..m {
                        for p in 0..k {
                            let wip = wv.data()[i * k + p];
                            for j in 0..n {
                                gx[p * n + j] += wip * g[i * n + j];
                            }
                        }
                    }
                });
                self.acc(grads, b, |gb| {
                    for (kk, gv) in g.iter().enumerate() {
                        gb[kk / n] += gv;
                    }
                });
            }
            Op::BatchMatVec(w, h) => {
                let (wv, hv) = (&self.nodes[w].value, &self.nodes[h].value);
                let (p, d, e) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
                self.acc(grads, w, |gw| {
                    for n in 0..p {
                        for i in 0..d {
                            let gi = g[n * d + i];
                            for j in 0..e {
                                gw[(n * d + i) * e + j] += gi * hv.data()[n * e + j];
                            }
                        }
                    }
                });
                self.acc(grads, h, |gh| {
                    for n in 0..p {
                        for i in 0..d {
                            let gi = g[n * d + i];
                            for j in 0..e {
                                gh[n * e + j] += gi * wv.data()[(n * d + i) * e + j];
                            }
                        }
                    }
                });
            }
            Op::Binary(kind, a, b, Bcast::Full, Bcast::Full) => {
                let (av, bv) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                self.acc(grads, a, |ga| match kind {
                    Binary::Add | Binary::Sub => ga.iter_mut().zip(g).for_each(|(x, gk)| *x += gk),
                    Binary::Mul => ga
                        .iter_mut()
                        .zip(g.iter().zip(bv))
                        .for_each(|(x, (gk, y))| *x += gk * y),
                });
                self.acc(grads, b, |gb| match kind {
                    Binary::Add => gb.iter_mut().zip(g).for_each(|(x, gk)| *x += gk),
                    Binary::Sub => gb.iter_mut().zip(g).for_each(|(x, gk)| *x -= gk),
                    Binary::Mul => gb
                        .iter_mut()
                        .zip(g.iter().zip(av))
                        .for_each(|(x, (gk, y))| *x += gk * y),
                });
            }
            Op::Binary(kind, a, b, ba, bb) => {
                let (av, bv) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                self.acc(grads, a, |ga| {
                    for (k, gk) in g.iter().enumerate() {
                        ga[ba.index(k)] += match kind {
                            Binary::Add | Binary::Sub => *gk,
                            Binary::Mul => gk * bv[bb.index(k)],
                        };
                    }
                });
                self.acc(grads, b, |gb| {
                    for (k, gk) in g.iter().enumerate() {
                        gb[bb.index(k)] += match kind {
                            Binary::Add => *gk,
                            Binary::Sub => -gk,
                            Binary::Mul => gk * av[ba.index(k)],
                        };
                    }
                });
            }
            Op::Scale(a, factor) => self.acc(grads, a, |ga| {
                for (x, gk) in ga.iter_mut().zip(g) {
                    *x += gk * factor;
                }
            }),
            Op::Shift(a) | Op::Reshape(a) => self.acc(grads, a, |ga| {
                for (x, gk) in ga.iter_mut().zip(g) {
                    *x += gk;
                }
            }),
            Op::Unary(kind, a) => {
                let inp = self.nodes[a].value.data();
                self.acc(grads, a, |ga| {
                    for k in 0..g.len() {
                        let local = match kind {
                            Unary::Sigmoid => out[k] * (1.0 - out[k]),
                            Unary::Tanh => 1.0 - out[k] * out[k],
                            Unary::Exp => out[k],
                            Unary::Log => 1.0 / inp[k],
                            Unary::Square => 2.0 * inp[k],
                            Unary::Softplus => sigmoid(inp[k]),
                        };
                        ga[k] += g[k] * local;
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = axis_extents(node.value.shape(), axis);
                self.acc(grads, a, |ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |t: usize| (o * len + t) * inner + i;
                            let dot: f64 = (0..len).map(|t| g[at(t)] * out[at(t)]).sum();
                            for t in 0..len {
                                ga[at(t)] += out[at(t)] * (g[at(t)] - dot);
                            }
                        }
                    }
                });
            }
            Op::SumAxis(a, axis) => {
                let (outer, len, inner) = axis_extents(self.nodes[a].value.shape(), axis);
                self.acc(grads, a, |ga| {
                    for o in 0..outer {
                        for t in 0..len {
                            for i in 0..inner {
                                ga[(o * len + t) * inner + i] += g[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::SumAll(a) => self.acc(grads, a, |ga| {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }),
            Op::Mean(a) => self.acc(grads, a, |ga| {
                let share = g[0] / ga.len() as f64;
                for x in ga.iter_mut() {
                    *x += share;
                }
            }),
            Op::Concat(ref parts, axis) => {
                let (outer, total, inner) = axis_extents(node.value.shape(), axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].value.shape()[axis];
                    self.acc(grads, p, |gp| {
                        for o in 0..outer {
                            let from = (o * total + offset) * inner;
                            for (x, gk) in gp[o * len * inner..(o + 1) * len * inner]
                                .iter_mut()
                                .zip(&g[from..from + len * inner])
                            {
                                *x += gk;
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { src, axis, start } => {
                let (outer, full, inner) = axis_extents(self.nodes[src].value.shape(), axis);
                let len = node.value.shape()[axis];
                self.acc(grads, src, |gs| {
                    for o in 0..outer {
                        let from = (o * full + start) * inner;
                        for (x, gk) in gs[from..from + len * inner]
                            .iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                        {
                            *x += gk;
                        }
                    }
                });
            }
        }
    }

    /// Accumulates into the gradient slot of `id` if that node needs one.
    fn acc(&self, grads: &mut [Option<Tensor>], id: usize, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[id];
        if !node.requires_grad {
            return;
        }
        let slot = grads[id].get_or_insert_with(|| Tensor::zeros(node.value.shape()));
        f(slot.data_mut());
    }
}

/// Result of [`Tape::backward`]: gradients indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, if any flowed to it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient w.r.t. `v`, zeros when the loss does not depend on it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }

    pub fn take(&mut self, tape: &Tape, v: Var) -> Tensor {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn matmul_raw(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::from_parts([m, n], out)
}

/// Resolves the supported broadcasts: identical shapes, a one-element operand,
/// or row/column vectors against a matrix.
fn broadcast(a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Bcast, Bcast)> {
    if a == b {
        return Ok((a.to_vec(), Bcast::Full, Bcast::Full));
    }
    let numel = |s: &[usize]| s.iter().product::<usize>();
    if numel(b) == 1 {
        return Ok((a.to_vec(), Bcast::Full, Bcast::Scalar));
    }
    if numel(a) == 1 {
        return Ok((b.to_vec(), Bcast::Scalar, Bcast::Full));
    }
    if a.len() == 2 && b.len() == 2 {
        let rows = a[0].max(b[0]);
        let cols = a[1].max(b[1]);
        let out = [rows, cols];
        let map = |s: &[usize]| -> Option<Bcast> {
            if s == out {
                Some(Bcast::Full)
            } else if s == [1, cols] {
                Some(Bcast::Row(cols))
            } else if s == [rows, 1] {
                Some(Bcast::Col(cols))
            } else {
                None
            }
        };
        if let (Some(ba), Some(bb)) = (map(a), map(b)) {
            return Ok((out.to_vec(), ba, bb));
        }
    }
    Err(Error::shape("broadcast", a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn sigmoid_value_and_slope_at_zero() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(0.0));
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y).item(), 0.5);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(&t, x).item(), 0.25);
    }

    #[test]
    fn softmax_of_equal_logits() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::column(&[0.0, 0.0]));
        let y = t.softmax(x, 0).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn matmul_by_hand() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = t.constant(Tensor::column(&[1.0, 1.0]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).shape(), &[2, 1]);
        assert_eq!(t.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.square(x).unwrap();
        assert_eq!(t.backward(y).unwrap().wrt(&t, x).item(), 6.0);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let mut t = Tape::new();
        let v = t.param(Tensor::column(&[0.3, -1.2, 2.0, 0.7]));
        let s = t.softmax(v, 0).unwrap();
        let l = t.sum(s).unwrap();
        let g = t.backward(l).unwrap().wrt(&t, v);
        assert!(g.max_abs() < 1e-15, "{g:?}");
    }

    #[test]
    fn fan_out_accumulates_both_paths() {
        // l = x*x + 3x at x = 2 -> dl/dx = 2x + 3 = 7
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(2.0));
        let sq = t.mul(x, x).unwrap();
        let lin = t.scale(x, 3.0).unwrap();
        let l = t.add(sq, lin).unwrap();
        assert_eq!(t.backward(l).unwrap().wrt(&t, x).item(), 7.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.param(Tensor::column(&[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_errors_report_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        match t.matmul(a, b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
        let c = t.constant(Tensor::zeros(&[3, 2]));
        assert!(t.add(a, c).is_err());
    }

    #[test]
    fn non_finite_output_is_numeric_error_when_checked() {
        let mut t = Tape::new().with_finite_checks(true);
        let x = t.constant(Tensor::scalar(-1.0));
        assert!(matches!(t.log(x), Err(Error::Numeric(_))));
    }

    #[test]
    fn row_and_column_broadcasts() {
        let mut t = Tape::new();
        let m = t.param(Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
        let r = t.param(Tensor::row(&[10.0, 20.0]));
        let c = t.param(Tensor::column(&[1.0, 2.0, 3.0]));
        let a = t.add(m, r).unwrap();
        assert_eq!(t.value(a).data(), &[11.0, 22.0, 13.0, 24.0, 15.0, 26.0]);
        let p = t.mul(a, c).unwrap();
        assert_eq!(t.value(p).data(), &[11.0, 22.0, 26.0, 48.0, 45.0, 78.0]);
        let l = t.sum(p).unwrap();
        let g = t.backward(l).unwrap();
        // d/dr_j = sum_i c_i
        assert_eq!(g.wrt(&t, r).data(), &[6.0, 6.0]);
        // d/dc_i = sum_j a_ij
        assert_eq!(g.wrt(&t, c).data(), &[33.0, 37.0, 41.0]);
    }

    #[test]
    fn softplus_is_stable() {
        assert!(close(softplus(0.0), std::f64::consts::LN_2, 1e-15));
        assert!(close(softplus(800.0), 800.0, 1e-12));
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let run = || {
            let mut t = Tape::new();
            let w = t.param(Tensor::matrix(&[&[0.3, -0.7], &[1.1, 0.2]]));
            let x = t.constant(Tensor::column(&[0.5, -1.5]));
            let h = t.matmul(w, x).unwrap();
            let y = t.tanh(h).unwrap();
            let s = t.softmax(y, 0).unwrap();
            let l = t.sum(s).unwrap();
            let l2 = t.square(y).unwrap();
            let l2 = t.mean(l2).unwrap();
            let l = t.add(l, l2).unwrap();
            let g = t.backward(l).unwrap();
            (t.value(l).item().to_bits(), g.wrt(&t, w).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }
}
