//! Tape-based reverse-mode autodiff.
//!
//! A [`Graph`] owns every value produced during one forward pass. Nodes are
//! appended in execution order, so the node list is already a topological order
//! and the backward pass is a single reverse sweep.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels::{self, MatmulDims};
use crate::params::ParamSet;
use crate::tensor::{numel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Param(String),
    /// Value computed with tracing disabled; carries no backward rule.
    Untraced(&'static str),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Linear(Var, Var, Option<Var>),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    BroadcastTo(Var),
    LayerNorm { x: Var, rstd: Vec<T> },
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    Embedding { table: Var, indices: Vec<usize> },
    Rotary { x: Var, cos: Arc<Tensor<T>>, sin: Arc<Tensor<T>> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Untraced(n) => n,
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Linear(..) => "linear",
            Op::Reshape(_) => "reshape",
            Op::Permute(..) => "permute",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::BroadcastTo(_) => "broadcast",
            Op::LayerNorm { .. } => "layernorm",
            Op::Gelu(_) => "gelu",
            Op::Softmax { .. } => "softmax",
            Op::Embedding { .. } => "embedding",
            Op::Rotary { .. } => "rotary",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) | Op::Untraced(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Linear(x, w, b) => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Scale(x, _)
            | Op::Reshape(x)
            | Op::Permute(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::BroadcastTo(x)
            | Op::Gelu(x) => vec![*x],
            Op::Slice { x, .. }
            | Op::LayerNorm { x, .. }
            | Op::Softmax { x, .. }
            | Op::Rotary { x, .. } => vec![*x],
            Op::Concat(xs, _) => xs.clone(),
            Op::Embedding { table, .. } => vec![*table],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// One entry of the computation record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordEntry {
    pub op: &'static str,
    pub inputs: Vec<Var>,
    pub output: Var,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    by_name: BTreeMap<String, Tensor<T>>,
    /// Nodes whose backward rule ran, in the order they ran.
    pub visited: Vec<Var>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.by_name.iter()
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    tracing: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    /// A graph that records ops for [`Graph::backward`].
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            tracing: true,
        }
    }

    /// A graph for inference only; forward values are identical to a traced graph.
    pub fn untraced() -> Self {
        Graph {
            nodes: Vec::new(),
            tracing: false,
        }
    }

    pub fn is_tracing(&self) -> bool {
        self.tracing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn record(&self) -> Vec<RecordEntry> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| RecordEntry {
                op: n.op.name(),
                inputs: n.op.inputs(),
                output: Var(i),
            })
            .collect()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let op = if self.tracing || matches!(op, Op::Param(_) | Op::Leaf) {
            op
        } else {
            Op::Untraced(op.name())
        };
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn raw(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Result<Var> {
        self.push(Tensor::from_parts(shape, data), op)
    }

    /// Inserts a constant (no gradient is reported for it).
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf)
    }

    /// Inserts the named parameter of `params` as a differentiable leaf.
    pub fn param(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        let t = params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?
            .clone();
        self.push(t, Op::Param(name.to_string()))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        mk: fn(Var, Var) -> Op<T>,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = kernels::broadcast_shape(op, ta.shape(), tb.shape())?;
        let data =
            kernels::broadcast_binary(ta.data(), ta.shape(), tb.data(), tb.shape(), &out_shape, f);
        self.raw(out_shape, data, mk(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = kernels::matmul_dims(self.shape(a), self.shape(b))?;
        let data = kernels::matmul_forward(self.value(a).data(), self.value(b).data(), &d);
        self.raw(d.out_shape, data, Op::MatMul(a, b))
    }

    /// `x @ w + b` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let mismatch = |rhs: Vec<usize>| TensorError::ShapeMismatch {
            op: "linear",
            lhs: xs.clone(),
            rhs,
        };
        if ws.len() != 2 || xs.is_empty() || xs[xs.len() - 1] != ws[0] {
            return Err(mismatch(ws));
        }
        let (din, dout) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(mismatch(self.shape(b).to_vec()));
            }
        }
        let rows = numel(&xs) / din;
        let mut out = vec![T::zero(); rows * dout];
        kernels::gemm(
            rows,
            din,
            dout,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            false,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(dout) {
                for (o, &bv) in row.iter_mut().zip(bias) {
                    *o = *o + bv;
                }
            }
        }
        let mut shape = xs.clone();
        *shape.last_mut().unwrap() = dout;
        self.raw(shape, out, Op::Linear(x, w, b))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        self.push(t, Op::Reshape(x))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = perm.len() == shape.len()
            && perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(TensorError::invalid(
                "permute",
                format!("{perm:?} is not a permutation of the axes of {shape:?}"),
            ));
        }
        let (data, out_shape) = kernels::permute(self.value(x).data(), &shape, perm);
        self.raw(out_shape, data, Op::Permute(x, perm.to_vec()))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| TensorError::invalid("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::invalid(
                "concat",
                format!("axis {axis} out of range for {first:?}"),
            ));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.raw(shape, out, Op::Concat(xs.to_vec(), axis))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, alen, inner) = kernels::axis_split(&shape, axis);
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.raw(out_shape, out, Op::Slice { x, axis, start })
    }

    /// Splits `x` along `axis` into pieces of the given sizes.
    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let total: usize = sizes.iter().sum();
        let shape = self.shape(x);
        if axis >= shape.len() || total != shape[axis] {
            return Err(TensorError::invalid(
                "split",
                format!("sizes {sizes:?} do not cover axis {axis} of {shape:?}"),
            ));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.slice(x, axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum_all();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(TensorError::invalid("mean", "empty tensor"));
        }
        let m = t.sum_all() / T::c(t.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let out = kernels::broadcast_shape("broadcast", &xs, shape)?;
        if out != shape {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast",
                lhs: xs,
                rhs: shape.to_vec(),
            });
        }
        let zeros = vec![T::zero(); numel(shape)];
        let data = kernels::broadcast_binary(
            self.value(x).data(),
            &xs,
            &zeros,
            shape,
            shape,
            |a, _| a,
        );
        self.raw(out, data, Op::BroadcastTo(x))
    }

    /// Layer normalization over the last axis, without affine parameters.
    pub fn layernorm(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| TensorError::invalid("layernorm", "scalar input"))?;
        if d == 0 {
            return Err(TensorError::invalid("layernorm", "zero-length axis"));
        }
        let (out, rstd) = kernels::layernorm_forward(self.value(x).data(), d);
        self.raw(shape, out, Op::LayerNorm { x, rstd })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(kernels::gelu);
        self.push(t, Op::Gelu(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(TensorError::invalid(
                "softmax",
                format!("axis {axis} of {shape:?} is empty or out of range"),
            ));
        }
        let out = kernels::softmax_forward(self.value(x).data(), &shape, axis);
        self.raw(shape, out, Op::Softmax { x, axis })
    }

    /// Gathers rows of `table` (`[vocab, dim]`).
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(TensorError::invalid("embedding", format!("table shape {ts:?}")));
        }
        let (vocab, dim) = (ts[0], ts[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(TensorError::invalid(
                "embedding",
                format!("index {bad} out of range for vocabulary {vocab}"),
            ));
        }
        let data = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(&data[i * dim..(i + 1) * dim]);
        }
        self.raw(
            vec![indices.len(), dim],
            out,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    /// Rotary embedding over `x` of shape `[..., n, d]` with `[n, d/2]` angle tables.
    pub fn rotary(&mut self, x: Var, cos: Arc<Tensor<T>>, sin: Arc<Tensor<T>>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::invalid("rotary", format!("input shape {shape:?}")));
        }
        let (n, d) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if d % 2 != 0 || cos.shape() != [n, d / 2] || sin.shape() != cos.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "rotary",
                lhs: shape,
                rhs: cos.shape().to_vec(),
            });
        }
        let out = kernels::rotary(self.value(x).data(), n, d, cos.data(), sin.data(), false);
        self.raw(shape, out, Op::Rotary { x, cos, sin })
    }

    /// Reverse sweep from a scalar `loss`. Gradients are accumulated per parameter name;
    /// parameters of `params` that did not participate get exact zeros.
    pub fn backward(&self, loss: Var, params: &ParamSet<T>) -> Result<Gradients<T>> {
        let mut grads = self.backward_raw(loss)?;
        for (name, t) in params.iter() {
            grads
                .by_name
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(t.shape()));
        }
        for (name, g) in &grads.by_name {
            if !g.is_finite() {
                return Err(TensorError::NonFiniteGradient(name.clone()));
            }
        }
        Ok(grads)
    }

    /// Gradients for the parameters that appear in this graph only.
    pub fn backward_raw(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 || !self.value(loss).shape().is_empty() {
            return Err(TensorError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if !self.tracing {
            return Err(TensorError::invalid(
                "backward",
                "graph was built with tracing disabled",
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut by_name: BTreeMap<String, Tensor<T>> = BTreeMap::new();
        let mut visited = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            visited.push(Var(i));
            let node = &self.nodes[i];
            let mut acc = |v: Var, delta: Vec<T>| {
                let slot = &mut grads[v.0];
                match slot {
                    Some(existing) => {
                        for (e, d) in existing.iter_mut().zip(delta) {
                            *e = *e + d;
                        }
                    }
                    None => *slot = Some(delta),
                }
            };
            let out_shape = node.value.shape();
            match &node.op {
                Op::Leaf | Op::Untraced(_) => {}
                Op::Param(name) => {
                    let g = Tensor::from_parts(out_shape.to_vec(), g);
                    match by_name.get_mut(name) {
                        Some(existing) => {
                            *existing = existing.zip_map(&g, |a, b| a + b)?;
                        }
                        None => {
                            by_name.insert(name.clone(), g);
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sa = self.shape(*a).to_vec();
                    let sb = self.shape(*b).to_vec();
                    let gb = kernels::reduce_to_shape(&g, out_shape, &sb);
                    let gb = if matches!(node.op, Op::Sub(..)) {
                        gb.into_iter().map(|x| -x).collect()
                    } else {
                        gb
                    };
                    acc(*a, kernels::reduce_to_shape(&g, out_shape, &sa));
                    acc(*b, gb);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga_full = kernels::broadcast_binary(
                        &g,
                        out_shape,
                        tb.data(),
                        tb.shape(),
                        out_shape,
                        |x, y| x * y,
                    );
                    let gb_full = kernels::broadcast_binary(
                        &g,
                        out_shape,
                        ta.data(),
                        ta.shape(),
                        out_shape,
                        |x, y| x * y,
                    );
                    acc(*a, kernels::reduce_to_shape(&ga_full, out_shape, ta.shape()));
                    acc(*b, kernels::reduce_to_shape(&gb_full, out_shape, tb.shape()));
                }
                Op::Scale(a, s) => acc(*a, g.into_iter().map(|x| x * *s).collect()),
                Op::MatMul(a, b) => {
                    let d: MatmulDims = kernels::matmul_dims(self.shape(*a), self.shape(*b))?;
                    let (ga, gb) =
                        kernels::matmul_backward(self.value(*a).data(), self.value(*b).data(), &g, &d);
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Linear(x, w, b) => {
                    let ws = self.shape(*w);
                    let (din, dout) = (ws[0], ws[1]);
                    let xv = self.value(*x).data();
                    let rows = xv.len() / din;
                    let mut gx = vec![T::zero(); xv.len()];
                    kernels::gemm(rows, dout, din, &g, false, self.value(*w).data(), true, &mut gx, false);
                    let mut gw = vec![T::zero(); din * dout];
                    kernels::gemm(din, rows, dout, xv, true, &g, false, &mut gw, false);
                    if let Some(b) = b {
                        let mut gb = vec![T::zero(); dout];
                        for row in g.chunks(dout) {
                            for (o, &v) in gb.iter_mut().zip(row) {
                                *o = *o + v;
                            }
                        }
                        acc(*b, gb);
                    }
                    acc(*x, gx);
                    acc(*w, gw);
                }
                Op::Reshape(x) => acc(*x, g),
                Op::Permute(x, perm) => {
                    let inv = kernels::inverse_perm(perm);
                    let (gx, _) = kernels::permute(&g, out_shape, &inv);
                    acc(*x, gx);
                }
                Op::Concat(xs, axis) => {
                    let (outer, total, inner) = kernels::axis_split(out_shape, *axis);
                    let mut offset = 0;
                    for &v in xs {
                        let len = self.shape(v)[*axis];
                        let mut gv = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gv.extend_from_slice(&g[base..base + len * inner]);
                        }
                        offset += len;
                        acc(v, gv);
                    }
                }
                Op::Slice { x, axis, start } => {
                    let xs = self.shape(*x);
                    let (outer, alen, inner) = kernels::axis_split(xs, *axis);
                    let len = out_shape[*axis];
                    let mut gx = vec![T::zero(); numel(xs)];
                    for o in 0..outer {
                        let dst = (o * alen + start) * inner;
                        let src = o * len * inner;
                        gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                    }
                    acc(*x, gx);
                }
                Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).numel()]),
                Op::Mean(x) => {
                    let n = self.value(*x).numel();
                    acc(*x, vec![g[0] / T::c(n as f64); n]);
                }
                Op::BroadcastTo(x) => {
                    acc(*x, kernels::reduce_to_shape(&g, out_shape, self.shape(*x)));
                }
                Op::LayerNorm { x, rstd } => {
                    let d = *out_shape.last().unwrap();
                    acc(*x, kernels::layernorm_backward(node.value.data(), rstd, &g, d));
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x).data();
                    acc(
                        *x,
                        g.iter()
                            .zip(xv)
                            .map(|(&gi, &xi)| gi * kernels::gelu_grad(xi))
                            .collect(),
                    );
                }
                Op::Softmax { x, axis } => {
                    acc(
                        *x,
                        kernels::softmax_backward(node.value.data(), &g, out_shape, *axis),
                    );
                }
                Op::Embedding { table, indices } => {
                    let ts = self.shape(*table);
                    let dim = ts[1];
                    let mut gt = vec![T::zero(); numel(ts)];
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..dim {
                            gt[i * dim + j] = gt[i * dim + j] + g[r * dim + j];
                        }
                    }
                    acc(*table, gt);
                }
                Op::Rotary { x, cos, sin } => {
                    let nd = out_shape.len();
                    let (n, d) = (out_shape[nd - 2], out_shape[nd - 1]);
                    acc(*x, kernels::rotary(&g, n, d, cos.data(), sin.data(), true));
                }
            }
        }
        Ok(Gradients { by_name, visited })
    }
}
