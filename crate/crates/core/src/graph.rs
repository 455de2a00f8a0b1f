//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is a define-by-run tape: every op evaluates eagerly, records a
//! node, and [`Graph::backward`] walks the tape in reverse creation order.
//! Creation order is already a topological order, so each node is visited
//! exactly once. Gradients accumulate across repeated `backward` calls; the
//! training loop builds a fresh graph per iteration instead of resetting.
//!
//! Every op output is scanned for NaN/Inf and reported as
//! [`Error::NonFinite`] rather than silently propagated.

use crate::error::{Error, Result};
use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a node on the tape. Only meaningful for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Add,
    Sub,
    Mul,
    MatMul,
    Conv2d { stride: usize, pad: usize },
    TConv2d { stride: usize, pad: usize },
    MaxPool2d { argmax: Vec<usize> },
    Relu,
    Sigmoid,
    Log,
    Square,
    MeanAll,
    SumAll,
    Reshape,
    Concat { axis: usize },
    Clamp { lo: S, hi: S },
}

#[derive(Debug)]
struct Node<S> {
    op: Op<S>,
    inputs: Vec<NodeId>,
    value: Tensor<S>,
    requires: bool,
}

/// The autodiff tape. Single-threaded by design; kernels may parallelize
/// internally over disjoint output slices without affecting results.
#[derive(Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// Insert a tensor that does not require a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push_unchecked(Op::Leaf, vec![], value, false)
    }

    /// Insert a tensor whose gradient will be available after `backward`.
    pub fn leaf(&mut self, value: Tensor<S>) -> NodeId {
        self.push_unchecked(Op::Leaf, vec![], value, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of the last `backward` root(s) w.r.t. `id`.
    pub fn grad(&self, id: NodeId) -> Option<Tensor<S>> {
        self.grads[id.0]
            .as_ref()
            .map(|g| Tensor::new(self.nodes[id.0].value.shape().to_vec(), g.clone()).expect("grad shaped like value"))
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Drop all accumulated gradients. Never called implicitly.
    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn push_unchecked(&mut self, op: Op<S>, inputs: Vec<NodeId>, value: Tensor<S>, requires: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires,
        });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    /// Record an op result, enforcing the all-finite invariant.
    fn push(&mut self, name: &'static str, op: Op<S>, inputs: Vec<NodeId>, value: Tensor<S>) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires = inputs.iter().any(|&i| self.nodes[i.0].requires);
        Ok(self.push_unchecked(op, inputs, value, requires))
    }

    fn binary_broadcast(
        &mut self,
        name: &'static str,
        op: Op<S>,
        a: NodeId,
        b: NodeId,
        f: impl Fn(S, S) -> S,
    ) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let oshape = kernels::broadcast_shape(ta.shape(), tb.shape()).ok_or(Error::Shape {
            op: name,
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        })?;
        let values = kernels::broadcast_apply(ta.as_slice(), ta.shape(), tb.as_slice(), tb.shape(), &oshape, f);
        let out = Tensor::new(oshape, values).expect("broadcast result shaped");
        self.push(name, op, vec![a, b], out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_broadcast("add", Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_broadcast("sub", Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_broadcast("mul", Op::Mul, a, b, |x, y| x * y)
    }

    /// Rank-2 matrix product `[m,k] @ [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape_err = || Error::Shape {
            op: "matmul",
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        };
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err());
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![S::zero(); m * n];
        kernels::matmul(ta.as_slice(), tb.as_slice(), m, k, n, false, &mut out);
        let out = Tensor::new(vec![m, n], out).expect("matmul result shaped");
        self.push("matmul", Op::MatMul, vec![a, b], out)
    }

    /// 2-D convolution, NCHW input `[n,cin,h,w]`, kernel `[cout,cin,kh,kw]`,
    /// explicit stride and zero padding.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let (tx, tw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        let shape_err = || Error::Shape {
            op: "conv2d",
            lhs: tx.shape().to_vec(),
            rhs: tw.shape().to_vec(),
        };
        if tx.rank() != 4 || tw.rank() != 4 || tx.shape()[1] != tw.shape()[1] {
            return Err(shape_err());
        }
        let (n, cin, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let (cout, kh, kw) = (tw.shape()[0], tw.shape()[2], tw.shape()[3]);
        let (Some(_), Some(_)) = (
            kernels::conv_out_dim(h, kh, stride, pad),
            kernels::conv_out_dim(wd, kw, stride, pad),
        ) else {
            return Err(shape_err());
        };
        let (y, ho, wo) = kernels::conv2d_forward(tx.as_slice(), n, cin, h, wd, tw.as_slice(), cout, kh, kw, stride, pad);
        let out = Tensor::new(vec![n, cout, ho, wo], y).expect("conv result shaped");
        self.push("conv2d", Op::Conv2d { stride, pad }, vec![x, w], out)
    }

    /// Transposed 2-D convolution, input `[n,cin,h,w]`, kernel
    /// `[cin,cout,kh,kw]`; spatial growth `(i-1)*stride + k - 2*pad`.
    pub fn tconv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let (tx, tw) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        let shape_err = || Error::Shape {
            op: "tconv2d",
            lhs: tx.shape().to_vec(),
            rhs: tw.shape().to_vec(),
        };
        if tx.rank() != 4 || tw.rank() != 4 || tx.shape()[1] != tw.shape()[0] {
            return Err(shape_err());
        }
        let (n, cin, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let (cout, kh, kw) = (tw.shape()[1], tw.shape()[2], tw.shape()[3]);
        let (Some(_), Some(_)) = (
            kernels::tconv_out_dim(h, kh, stride, pad),
            kernels::tconv_out_dim(wd, kw, stride, pad),
        ) else {
            return Err(shape_err());
        };
        let (y, ho, wo) = kernels::tconv2d_forward(tx.as_slice(), n, cin, h, wd, tw.as_slice(), cout, kh, kw, stride, pad);
        let out = Tensor::new(vec![n, cout, ho, wo], y).expect("tconv result shaped");
        self.push("tconv2d", Op::TConv2d { stride, pad }, vec![x, w], out)
    }

    /// Max pooling over square windows, no padding. Ties take the first
    /// element in row-major window order.
    pub fn maxpool2d(&mut self, x: NodeId, kernel: usize, stride: usize) -> Result<NodeId> {
        let tx = &self.nodes[x.0].value;
        let shape_err = || Error::Shape {
            op: "maxpool2d",
            lhs: tx.shape().to_vec(),
            rhs: vec![kernel, stride],
        };
        if tx.rank() != 4 {
            return Err(shape_err());
        }
        let (n, c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let (Some(_), Some(_)) = (
            kernels::conv_out_dim(h, kernel, stride, 0),
            kernels::conv_out_dim(w, kernel, stride, 0),
        ) else {
            return Err(shape_err());
        };
        let (y, argmax, ho, wo) = kernels::maxpool2d_forward(tx.as_slice(), n, c, h, w, kernel, stride);
        let out = Tensor::new(vec![n, c, ho, wo], y).expect("pool result shaped");
        self.push("maxpool2d", Op::MaxPool2d { argmax }, vec![x], out)
    }

    fn unary(
        &mut self,
        name: &'static str,
        op: Op<S>,
        x: NodeId,
        f: impl Fn(S) -> S,
    ) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(f);
        self.push(name, op, vec![x], out)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("relu", Op::Relu, x, |v| if v > S::zero() { v } else { S::zero() })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("sigmoid", Op::Sigmoid, x, |v| {
            // Split by sign so the exponential never overflows.
            if v >= S::zero() {
                S::one() / (S::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (S::one() + e)
            }
        })
    }

    /// Natural logarithm. Non-positive inputs produce a NaN/-Inf and are
    /// rejected by the finite-value scan; loss code clamps first.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("log", Op::Log, x, |v| v.ln())
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("square", Op::Square, x, |v| v * v)
    }

    pub fn clamp(&mut self, x: NodeId, lo: S, hi: S) -> Result<NodeId> {
        // Also rejects NaN bounds, which compare as unordered.
        if !matches!(lo.partial_cmp(&hi), Some(std::cmp::Ordering::Less)) {
            return Err(Error::config(format!("clamp bounds inverted: [{lo}, {hi}]")));
        }
        self.unary("clamp", Op::Clamp { lo, hi }, x, |v| {
            if v < lo {
                lo
            } else if v > hi {
                hi
            } else {
                v
            }
        })
    }

    /// Mean over all elements, producing a `[1]` tensor.
    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let t = &self.nodes[x.0].value;
        let n = S::from_f64(t.len() as f64);
        let sum: S = t.as_slice().iter().copied().sum();
        self.push("mean_all", Op::MeanAll, vec![x], Tensor::scalar(sum / n))
    }

    /// Sum over all elements, producing a `[1]` tensor.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let t = &self.nodes[x.0].value;
        let sum: S = t.as_slice().iter().copied().sum();
        self.push("sum_all", Op::SumAll, vec![x], Tensor::scalar(sum))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let out = self.nodes[x.0].value.reshaped(shape)?;
        self.push("reshape", Op::Reshape, vec![x], out)
    }

    /// Concatenate along `axis`; all other dimensions must match.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| Error::config("concat of zero tensors"))?;
        let base = self.nodes[first.0].value.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::config(format!(
                "concat axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.nodes[p.0].value.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (&d, &bd))| i == axis || d == bd);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut oshape = base.clone();
        oshape[axis] = axis_total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut values = vec![S::zero(); outer * axis_total * inner];
        let mut offset = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            let e = t.shape()[axis];
            let src = t.as_slice();
            for o in 0..outer {
                let dst_at = (o * axis_total + offset) * inner;
                let src_at = o * e * inner;
                values[dst_at..dst_at + e * inner].copy_from_slice(&src[src_at..src_at + e * inner]);
            }
            offset += e;
        }
        let out = Tensor::new(oshape, values).expect("concat result shaped");
        self.push("concat", Op::Concat { axis }, parts.to_vec(), out)
    }

    /// Backpropagate from a scalar root. Each requires-grad leaf's gradient
    /// is accumulated (not overwritten), matching the documented contract.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::config(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        if !self.nodes[root.0].requires {
            return Ok(()); // nothing reachable requires a gradient
        }
        // Work in fresh buffers so that earlier accumulated gradients are not
        // propagated a second time; fold into the persistent store at the end.
        let mut work: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        accumulate(&mut work[root.0], 1, |g| g[0] += S::one());

        for i in (0..self.nodes.len()).rev() {
            if work[i].is_none() || !self.nodes[i].requires {
                continue;
            }
            // Inputs always precede their consumer on the tape, so the tape
            // splits into mutable (inputs) and shared (current) halves.
            let (before_nodes, at_nodes) = self.nodes.split_at(i);
            let (before, at) = work.split_at_mut(i);
            let node = &at_nodes[0];
            let g = at[0].as_deref().expect("checked above");

            let requires = |id: NodeId| before_nodes[id.0].requires;
            let val = |id: NodeId| &before_nodes[id.0].value;

            match &node.op {
                Op::Leaf => {}
                Op::Add | Op::Sub => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let gshape = node.value.shape();
                    if requires(a) {
                        let ga = kernels::reduce_to_shape(g, gshape, val(a).shape());
                        accumulate(&mut before[a.0], val(a).len(), |buf| add_assign(buf, &ga));
                    }
                    if requires(b) {
                        let gb = kernels::reduce_to_shape(g, gshape, val(b).shape());
                        let negate = matches!(node.op, Op::Sub);
                        accumulate(&mut before[b.0], val(b).len(), |buf| {
                            for (d, s) in buf.iter_mut().zip(&gb) {
                                if negate {
                                    *d -= *s;
                                } else {
                                    *d += *s;
                                }
                            }
                        });
                    }
                }
                Op::Mul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let gshape = node.value.shape();
                    if requires(a) {
                        let prod = kernels::broadcast_apply(g, gshape, val(b).as_slice(), val(b).shape(), gshape, |x, y| x * y);
                        let ga = kernels::reduce_to_shape(&prod, gshape, val(a).shape());
                        accumulate(&mut before[a.0], val(a).len(), |buf| add_assign(buf, &ga));
                    }
                    if requires(b) {
                        let prod = kernels::broadcast_apply(g, gshape, val(a).as_slice(), val(a).shape(), gshape, |x, y| x * y);
                        let gb = kernels::reduce_to_shape(&prod, gshape, val(b).shape());
                        accumulate(&mut before[b.0], val(b).len(), |buf| add_assign(buf, &gb));
                    }
                }
                Op::MatMul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let (m, k) = (val(a).shape()[0], val(a).shape()[1]);
                    let n = val(b).shape()[1];
                    if requires(a) {
                        accumulate(&mut before[a.0], m * k, |buf| {
                            kernels::matmul_nt(g, val(b).as_slice(), m, n, k, true, buf);
                        });
                    }
                    if requires(b) {
                        accumulate(&mut before[b.0], k * n, |buf| {
                            kernels::matmul_tn(val(a).as_slice(), g, k, m, n, true, buf);
                        });
                    }
                }
                Op::Conv2d { stride, pad } => {
                    let (x, w) = (node.inputs[0], node.inputs[1]);
                    let (xs, ws) = (val(x).shape(), val(w).shape());
                    let (ho, wo) = (node.value.shape()[2], node.value.shape()[3]);
                    let (dx, dw) = kernels::conv2d_backward(
                        val(x).as_slice(), g,
                        xs[0], xs[1], xs[2], xs[3],
                        val(w).as_slice(),
                        ws[0], ws[2], ws[3],
                        *stride, *pad, ho, wo,
                    );
                    if requires(x) {
                        accumulate(&mut before[x.0], dx.len(), |buf| add_assign(buf, &dx));
                    }
                    if requires(w) {
                        accumulate(&mut before[w.0], dw.len(), |buf| add_assign(buf, &dw));
                    }
                }
                Op::TConv2d { stride, pad } => {
                    let (x, w) = (node.inputs[0], node.inputs[1]);
                    let (xs, ws) = (val(x).shape(), val(w).shape());
                    let (ho, wo) = (node.value.shape()[2], node.value.shape()[3]);
                    let (dx, dw) = kernels::tconv2d_backward(
                        val(x).as_slice(), g,
                        xs[0], xs[1], xs[2], xs[3],
                        val(w).as_slice(),
                        ws[1], ws[2], ws[3],
                        *stride, *pad, ho, wo,
                    );
                    if requires(x) {
                        accumulate(&mut before[x.0], dx.len(), |buf| add_assign(buf, &dx));
                    }
                    if requires(w) {
                        accumulate(&mut before[w.0], dw.len(), |buf| add_assign(buf, &dw));
                    }
                }
                Op::MaxPool2d { argmax } => {
                    let x = node.inputs[0];
                    if requires(x) {
                        let dx = kernels::maxpool2d_backward(g, argmax, val(x).len());
                        accumulate(&mut before[x.0], dx.len(), |buf| add_assign(buf, &dx));
                    }
                }
                Op::Relu => {
                    let x = node.inputs[0];
                    if requires(x) {
                        accumulate(&mut before[x.0], val(x).len(), |buf| {
                            for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(val(x).as_slice()) {
                                if xv > S::zero() {
                                    *d += gv;
                                }
                            }
                        });
                    }
                }
                Op::Sigmoid => {
                    let x = node.inputs[0];
                    if requires(x) {
                        let y = node.value.as_slice();
                        accumulate(&mut before[x.0], val(x).len(), |buf| {
                            for ((d, &gv), &yv) in buf.iter_mut().zip(g).zip(y) {
                                *d += gv * yv * (S::one() - yv);
                            }
                        });
                    }
                }
                Op::Log => {
                    let x = node.inputs[0];
                    if requires(x) {
                        accumulate(&mut before[x.0], val(x).len(), |buf| {
                            for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(val(x).as_slice()) {
                                *d += gv / xv;
                            }
                        });
                    }
                }
                Op::Square => {
                    let x = node.inputs[0];
                    if requires(x) {
                        let two = S::from_f64(2.0);
                        accumulate(&mut before[x.0], val(x).len(), |buf| {
                            for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(val(x).as_slice()) {
                                *d += two * xv * gv;
                            }
                        });
                    }
                }
                Op::Clamp { lo, hi } => {
                    let x = node.inputs[0];
                    if requires(x) {
                        accumulate(&mut before[x.0], val(x).len(), |buf| {
                            for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(val(x).as_slice()) {
                                if xv > *lo && xv < *hi {
                                    *d += gv;
                                }
                            }
                        });
                    }
                }
                Op::MeanAll => {
                    let x = node.inputs[0];
                    if requires(x) {
                        let n = S::from_f64(val(x).len() as f64);
                        let gv = g[0] / n;
                        accumulate(&mut before[x.0], val(x).len(), |buf| {
                            for d in buf.iter_mut() {
                                *d += gv;
                            }
                        });
                    }
                }
                Op::SumAll => {
                    let x = node.inputs[0];
                    if requires(x) {
                        let gv = g[0];
                        accumulate(&mut before[x.0], val(x).len(), |buf| {
                            for d in buf.iter_mut() {
                                *d += gv;
                            }
                        });
                    }
                }
                Op::Reshape => {
                    let x = node.inputs[0];
                    if requires(x) {
                        accumulate(&mut before[x.0], val(x).len(), |buf| add_assign(buf, g));
                    }
                }
                Op::Concat { axis } => {
                    let oshape = node.value.shape();
                    let outer: usize = oshape[..*axis].iter().product();
                    let inner: usize = oshape[*axis + 1..].iter().product();
                    let axis_total = oshape[*axis];
                    let mut offset = 0;
                    for &p in &node.inputs {
                        let e = val(p).shape()[*axis];
                        if requires(p) {
                            accumulate(&mut before[p.0], val(p).len(), |buf| {
                                for o in 0..outer {
                                    let src_at = (o * axis_total + offset) * inner;
                                    let dst_at = o * e * inner;
                                    add_assign(&mut buf[dst_at..dst_at + e * inner], &g[src_at..src_at + e * inner]);
                                }
                            });
                        }
                        offset += e;
                    }
                }
            }
        }

        for (slot, fresh) in self.grads.iter_mut().zip(work) {
            if let Some(fresh) = fresh {
                accumulate(slot, fresh.len(), |buf| add_assign(buf, &fresh));
            }
        }
        Ok(())
    }
}

fn add_assign<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

/// Ensure the gradient buffer exists (zero-initialized), then let `f` add
/// contributions into it.
fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, len: usize, f: impl FnOnce(&mut [S])) {
    let buf = slot.get_or_insert_with(|| vec![S::zero(); len]);
    f(buf);
}
