//! Tape of dense operations and its reverse sweep.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, gemm_nn, gemm_nt, gemm_tn};
use super::tensor::{Gradients, ParamId, ParamStore};
use crate::error::{bail, Error, Result};
use crate::Real;

/// Layer-norm variance epsilon.
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Param,
    MatMul,
    Add,
    Mul,
    ScalarMul,
    Relu,
    Gelu,
    RowSoftmax,
    LayerNorm,
    ConcatLastDim,
    ConcatRows,
    SliceLastDim,
    MaxOverAxis,
    MeanOverAxis,
    EmbeddingLookup,
    CrossEntropyWithLogits,
    Reshape,
    Sum,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Param => "param",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::ScalarMul => "scalar_mul",
            OpKind::Relu => "relu",
            OpKind::Gelu => "gelu",
            OpKind::RowSoftmax => "row_softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::ConcatLastDim => "concat_lastdim",
            OpKind::ConcatRows => "concat_rows",
            OpKind::SliceLastDim => "slice_lastdim",
            OpKind::MaxOverAxis => "max_over_axis",
            OpKind::MeanOverAxis => "mean_over_axis",
            OpKind::EmbeddingLookup => "embedding_lookup",
            OpKind::CrossEntropyWithLogits => "cross_entropy_with_logits",
            OpKind::Reshape => "reshape",
            OpKind::Sum => "sum",
        }
    }
}

/// Operation plus attributes, for the generic [`Graph::apply`] entry point.
#[derive(Clone, Copy, Debug)]
pub enum OpSpec<'a, T> {
    MatMul { transpose_b: bool },
    Add,
    Mul,
    ScalarMul(T),
    Relu,
    Gelu,
    RowSoftmax,
    LayerNorm,
    ConcatLastDim,
    ConcatRows,
    SliceLastDim { start: usize, len: usize },
    MaxOverAxis(usize),
    MeanOverAxis(usize),
    EmbeddingLookup(&'a [usize]),
    CrossEntropyWithLogits(&'a [usize]),
    Reshape(&'a [usize]),
    Sum,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul { a: NodeId, b: NodeId, transpose_b: bool },
    Add { a: NodeId, b: NodeId, broadcast: bool },
    Mul { a: NodeId, b: NodeId },
    ScalarMul { a: NodeId, s: T },
    Relu(NodeId),
    Gelu(NodeId),
    RowSoftmax(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, xhat: Vec<T>, rstd: Vec<T> },
    ConcatLastDim(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceLastDim { a: NodeId, start: usize },
    MaxOverAxis { a: NodeId, outer: usize, len: usize, inner: usize, argmax: Vec<u32> },
    MeanOverAxis { a: NodeId, outer: usize, len: usize, inner: usize },
    Gather { table: NodeId, indices: Vec<usize> },
    CrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Vec<T> },
    Reshape(NodeId),
    Sum(NodeId),
}

#[derive(Debug)]
struct Node<'p, T: Clone> {
    shape: Vec<usize>,
    value: Cow<'p, [T]>,
    op: Op<T>,
    needs_grad: bool,
}

/// Computation graph recorded in topological order.
///
/// Parameters are borrowed from a [`ParamStore`]; the graph never mutates
/// them. [`Graph::backward`] returns gradients for trainable parameters only,
/// while still propagating through frozen ones.
pub struct Graph<'p, T: Real> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<'p, T>>,
    track: bool,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().unwrap_or(&1);
    let numel: usize = shape.iter().product();
    (if cols == 0 { 0 } else { numel / cols }, cols)
}

fn shape_err(kind: OpKind, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape { kind: kind.name(), lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

impl<'p, T: Real> Graph<'p, T> {
    /// Graph that records what backward needs.
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), track: true }
    }

    /// Forward-only graph; no node requires a gradient.
    pub fn inference(store: &'p ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), track: false }
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        match &self.nodes[id.0].op {
            Op::Leaf => OpKind::Leaf,
            Op::Param(_) => OpKind::Param,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Add { .. } => OpKind::Add,
            Op::Mul { .. } => OpKind::Mul,
            Op::ScalarMul { .. } => OpKind::ScalarMul,
            Op::Relu(_) => OpKind::Relu,
            Op::Gelu(_) => OpKind::Gelu,
            Op::RowSoftmax(_) => OpKind::RowSoftmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::ConcatLastDim(_) => OpKind::ConcatLastDim,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::SliceLastDim { .. } => OpKind::SliceLastDim,
            Op::MaxOverAxis { .. } => OpKind::MaxOverAxis,
            Op::MeanOverAxis { .. } => OpKind::MeanOverAxis,
            Op::Gather { .. } => OpKind::EmbeddingLookup,
            Op::CrossEntropy { .. } => OpKind::CrossEntropyWithLogits,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Sum(_) => OpKind::Sum,
        }
    }

    /// Value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.value(id)[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'p, [T]>, op: Op<T>, inputs: &[NodeId]) -> NodeId {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Param(id) => self.track && self.store.get(*id).requires_grad(),
            _ => self.track && inputs.iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node { shape, value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || numel != data.len() {
            return Err(shape_err(OpKind::Leaf, &shape, &[data.len()]));
        }
        Ok(self.push(shape, Cow::Owned(data), Op::Leaf, &[]))
    }

    pub fn constant_f32(&mut self, shape: Vec<usize>, data: &[f32]) -> Result<NodeId> {
        self.constant(shape, data.iter().map(|&v| T::of_f32(v)).collect())
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let t = self.store.get(id);
        self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Param(id), &[])
    }

    /// Generic dispatch over every operation kind.
    pub fn apply(&mut self, op: OpSpec<'_, T>, inputs: &[NodeId]) -> Result<NodeId> {
        let arity = |n: usize, kind: OpKind| -> Result<()> {
            if inputs.len() != n {
                bail!(InvalidArgument, "{} takes {n} inputs, got {}", kind.name(), inputs.len());
            }
            Ok(())
        };
        match op {
            OpSpec::MatMul { transpose_b } => {
                arity(2, OpKind::MatMul)?;
                if transpose_b {
                    self.matmul_nt(inputs[0], inputs[1])
                } else {
                    self.matmul(inputs[0], inputs[1])
                }
            }
            OpSpec::Add => {
                arity(2, OpKind::Add)?;
                self.add(inputs[0], inputs[1])
            }
            OpSpec::Mul => {
                arity(2, OpKind::Mul)?;
                self.mul(inputs[0], inputs[1])
            }
            OpSpec::ScalarMul(s) => {
                arity(1, OpKind::ScalarMul)?;
                Ok(self.scalar_mul(inputs[0], s))
            }
            OpSpec::Relu => {
                arity(1, OpKind::Relu)?;
                Ok(self.relu(inputs[0]))
            }
            OpSpec::Gelu => {
                arity(1, OpKind::Gelu)?;
                Ok(self.gelu(inputs[0]))
            }
            OpSpec::RowSoftmax => {
                arity(1, OpKind::RowSoftmax)?;
                Ok(self.row_softmax(inputs[0]))
            }
            OpSpec::LayerNorm => {
                arity(3, OpKind::LayerNorm)?;
                self.layer_norm(inputs[0], inputs[1], inputs[2])
            }
            OpSpec::ConcatLastDim => self.concat_lastdim(inputs),
            OpSpec::ConcatRows => self.concat_rows(inputs),
            OpSpec::SliceLastDim { start, len } => {
                arity(1, OpKind::SliceLastDim)?;
                self.slice_lastdim(inputs[0], start, len)
            }
            OpSpec::MaxOverAxis(axis) => {
                arity(1, OpKind::MaxOverAxis)?;
                self.max_over_axis(inputs[0], axis)
            }
            OpSpec::MeanOverAxis(axis) => {
                arity(1, OpKind::MeanOverAxis)?;
                self.mean_over_axis(inputs[0], axis)
            }
            OpSpec::EmbeddingLookup(idx) => {
                arity(1, OpKind::EmbeddingLookup)?;
                self.embedding_lookup(inputs[0], idx)
            }
            OpSpec::CrossEntropyWithLogits(labels) => {
                arity(1, OpKind::CrossEntropyWithLogits)?;
                self.cross_entropy_with_logits(inputs[0], labels)
            }
            OpSpec::Reshape(shape) => {
                arity(1, OpKind::Reshape)?;
                self.reshape(inputs[0], shape)
            }
            OpSpec::Sum => {
                arity(1, OpKind::Sum)?;
                Ok(self.sum(inputs[0]))
            }
        }
    }

    fn matrix_dims(&self, id: NodeId, kind: OpKind, other: NodeId) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(shape_err(kind, s, self.shape(other)));
        }
        Ok((s[0], s[1]))
    }

    /// `a[m,k] * b[k,n]`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.matrix_dims(a, OpKind::MatMul, b)?;
        let (k2, n) = self.matrix_dims(b, OpKind::MatMul, a)?;
        if k != k2 {
            return Err(shape_err(OpKind::MatMul, self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::MatMul { a, b, transpose_b: false }, &[a, b]))
    }

    /// `a[m,k] * b[n,k]^T`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.matrix_dims(a, OpKind::MatMul, b)?;
        let (n, k2) = self.matrix_dims(b, OpKind::MatMul, a)?;
        if k != k2 {
            return Err(shape_err(OpKind::MatMul, self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::MatMul { a, b, transpose_b: true }, &[a, b]))
    }

    /// Elementwise sum. `b` may also be a row vector (`[d]` or `[1, d]`)
    /// broadcast over every row of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (_, cols) = rows_cols(sa);
        let broadcast = if sa == sb {
            false
        } else if sb.iter().product::<usize>() == cols && sb.last() == Some(&cols) {
            true
        } else {
            return Err(shape_err(OpKind::Add, sa, sb));
        };
        let (va, vb) = (self.value(a), self.value(b));
        let out: Vec<T> = if broadcast {
            va.chunks_exact(cols).flat_map(|row| row.iter().zip(vb).map(|(&x, &y)| x + y)).collect()
        } else {
            va.iter().zip(vb).map(|(&x, &y)| x + y).collect()
        };
        let shape = sa.to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::Add { a, b, broadcast }, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(OpKind::Mul, self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::Mul { a, b }, &[a, b]))
    }

    pub fn scalar_mul(&mut self, a: NodeId, s: T) -> NodeId {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), Op::ScalarMul { a, s }, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), Op::Relu(a), &[a])
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).iter().map(|&x| kernels::gelu(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), Op::Gelu(a), &[a])
    }

    /// Softmax over the last dimension.
    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let (_, cols) = rows_cols(self.shape(a));
        let mut out = vec![T::zero(); self.value(a).len()];
        for (x, o) in self.value(a).chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
            kernels::softmax_row(x, o);
        }
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), Op::RowSoftmax(a), &[a])
    }

    /// Normalizes the last dimension (epsilon [`LN_EPS`]) then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (rows, cols) = rows_cols(self.shape(x));
        for p in [gain, bias] {
            if self.value(p).len() != cols {
                return Err(shape_err(OpKind::LayerNorm, self.shape(x), self.shape(p)));
            }
        }
        let eps = T::of(LN_EPS);
        let n = T::of(cols as f64);
        let mut xhat = vec![T::zero(); rows * cols];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * cols];
        let (g, b) = (self.value(gain), self.value(bias));
        for (r, row) in self.value(x).chunks_exact(cols).enumerate() {
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / n;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / n;
            let inv = T::one() / (var + eps).sqrt();
            rstd[r] = inv;
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias]))
    }

    pub fn concat_lastdim(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            bail!(InvalidArgument, "concat_lastdim of zero inputs");
        };
        let (rows, _) = rows_cols(self.shape(first));
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return Err(shape_err(OpKind::ConcatLastDim, self.shape(first), s));
            }
            total += s[s.len() - 1];
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let (_, c) = rows_cols(self.shape(p));
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(self.push(shape, Cow::Owned(out), Op::ConcatLastDim(parts.to_vec()), parts))
    }

    /// Concatenates rank-2 inputs along the first axis.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            bail!(InvalidArgument, "concat_rows of zero inputs");
        };
        let (_, cols) = self.matrix_dims(first, OpKind::ConcatRows, first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[1] != cols {
                return Err(shape_err(OpKind::ConcatRows, self.shape(first), s));
            }
            rows += s[0];
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(vec![rows, cols], Cow::Owned(out), Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `start..start + len` of the last dimension.
    pub fn slice_lastdim(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (_, cols) = rows_cols(self.shape(a));
        if len == 0 || start + len > cols {
            return Err(shape_err(OpKind::SliceLastDim, self.shape(a), &[start, len]));
        }
        let out = self.value(a).chunks_exact(cols).flat_map(|r| r[start..start + len].iter().copied()).collect();
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().expect("rank >= 1") = len;
        Ok(self.push(shape, Cow::Owned(out), Op::SliceLastDim { a, start }, &[a]))
    }

    fn axis_split(&self, a: NodeId, axis: usize, kind: OpKind) -> Result<(usize, usize, usize, Vec<usize>)> {
        let s = self.shape(a);
        if axis >= s.len() || s[axis] == 0 {
            return Err(shape_err(kind, s, &[axis]));
        }
        let outer = s[..axis].iter().product();
        let inner = s[axis + 1..].iter().product();
        let mut shape: Vec<usize> = s.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
        if shape.is_empty() {
            shape.push(1);
        }
        Ok((outer, s[axis], inner, shape))
    }

    /// Maximum over one axis; the first maximal element receives the gradient.
    pub fn max_over_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let (outer, len, inner, shape) = self.axis_split(a, axis, OpKind::MaxOverAxis)?;
        let v = self.value(a);
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = vec![0u32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut best = 0;
                let mut bv = v[base];
                for j in 1..len {
                    let x = v[base + j * inner];
                    if x > bv {
                        bv = x;
                        best = j;
                    }
                }
                out[o * inner + i] = bv;
                argmax[o * inner + i] = best as u32;
            }
        }
        Ok(self.push(shape, Cow::Owned(out), Op::MaxOverAxis { a, outer, len, inner, argmax }, &[a]))
    }

    pub fn mean_over_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let (outer, len, inner, shape) = self.axis_split(a, axis, OpKind::MeanOverAxis)?;
        let v = self.value(a);
        let scale = T::one() / T::of(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &v[(o * len + j) * inner..(o * len + j + 1) * inner];
                out[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
        }
        out.iter_mut().for_each(|x| *x *= scale);
        Ok(self.push(shape, Cow::Owned(out), Op::MeanOverAxis { a, outer, len, inner }, &[a]))
    }

    /// Row gather from a rank-2 table: `out[i] = table[indices[i]]`.
    pub fn embedding_lookup(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (rows, cols) = self.matrix_dims(table, OpKind::EmbeddingLookup, table)?;
        if indices.is_empty() {
            return Err(shape_err(OpKind::EmbeddingLookup, self.shape(table), &[0]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(shape_err(OpKind::EmbeddingLookup, self.shape(table), &[bad]));
        }
        let v = self.value(table);
        let out = indices.iter().flat_map(|&i| v[i * cols..(i + 1) * cols].iter().copied()).collect();
        let op = Op::Gather { table, indices: indices.to_vec() };
        Ok(self.push(vec![indices.len(), cols], Cow::Owned(out), op, &[table]))
    }

    /// Mean over rows of `-log softmax(logits)[label]`, in log-sum-exp form. Output shape `[1]`.
    pub fn cross_entropy_with_logits(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (rows, cols) = rows_cols(self.shape(logits));
        if labels.len() != rows {
            return Err(shape_err(OpKind::CrossEntropyWithLogits, self.shape(logits), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            bail!(InvalidArgument, "label {bad} out of range for {cols} classes");
        }
        let v = self.value(logits);
        let mut probs = vec![T::zero(); rows * cols];
        let mut total = T::zero();
        for (r, row) in v.chunks_exact(cols).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum = row.iter().fold(T::zero(), |s, &x| s + (x - max).exp_m());
            let lse = max + sum.ln_m();
            total += lse - row[labels[r]];
            kernels::softmax_row(row, &mut probs[r * cols..(r + 1) * cols]);
        }
        let loss = total / T::of(rows as f64);
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), probs };
        Ok(self.push(vec![1], Cow::Owned(vec![loss]), op, &[logits]))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if shape.is_empty() || shape.iter().product::<usize>() != self.value(a).len() {
            return Err(shape_err(OpKind::Reshape, self.shape(a), shape));
        }
        let value = self.value(a).to_vec();
        Ok(self.push(shape.to_vec(), Cow::Owned(value), Op::Reshape(a), &[a]))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).iter().fold(T::zero(), |s, &x| s + x);
        self.push(vec![1], Cow::Owned(vec![s]), Op::Sum(a), &[a])
    }

    /// Fingerprint of every non-differentiable branch decision taken in the
    /// forward pass (ReLU signs, max-pool winners, softmax/CE ignore this).
    /// Equal signatures mean two evaluations lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(PRIME);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for &x in self.value(*a) {
                        mix((x > T::zero()) as u64);
                    }
                }
                Op::MaxOverAxis { argmax, .. } => argmax.iter().for_each(|&i| mix(i as u64 + 2)),
                _ => {}
            }
        }
        h
    }

    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        self.backward_seeded(loss, T::one())
    }

    /// Reverse sweep with `d loss = seed`; visits nodes in exact reverse insertion order.
    pub fn backward_seeded(&self, loss: NodeId, seed: T) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            bail!(InvalidArgument, "backward needs a scalar loss, got shape {:?}", self.shape(loss));
        }
        let mut out = Gradients { per_param: vec![None; self.store.len()] };
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].needs_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(vec![seed]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], id: NodeId) -> Option<&'g mut Vec<T>> {
        if !self.nodes[id.0].needs_grad {
            return None;
        }
        let len = self.nodes[id.0].value.len();
        Some(grads[id.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backprop_node(&self, node: &Node<'p, T>, g: &[T], grads: &mut [Option<Vec<T>>], out: &mut Gradients<T>) {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                if self.store.get(*id).requires_grad() {
                    match &mut out.per_param[id.0] {
                        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &v)| *a += v),
                        slot @ None => *slot = Some(g.to_vec()),
                    }
                }
            }
            Op::MatMul { a, b, transpose_b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = node.shape[1];
                if let Some(ga) = self.buf(grads, *a) {
                    if *transpose_b {
                        gemm_nn(g, self.value(*b), ga, m, n, k);
                    } else {
                        gemm_nt(g, self.value(*b), ga, m, n, k);
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    if *transpose_b {
                        gemm_tn(g, self.value(*a), gb, m, n, k);
                    } else {
                        gemm_tn(self.value(*a), g, gb, m, k, n);
                    }
                }
            }
            Op::Add { a, b, broadcast } => {
                if let Some(ga) = self.buf(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                }
                if let Some(gb) = self.buf(grads, *b) {
                    if *broadcast {
                        for row in g.chunks_exact(gb.len()) {
                            gb.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                        }
                    } else {
                        gb.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                    }
                }
            }
            Op::Mul { a, b } => {
                if let Some(ga) = self.buf(grads, *a) {
                    for ((d, &v), &y) in ga.iter_mut().zip(g).zip(self.value(*b)) {
                        *d += v * y;
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    for ((d, &v), &x) in gb.iter_mut().zip(g).zip(self.value(*a)) {
                        *d += v * x;
                    }
                }
            }
            Op::ScalarMul { a, s } => {
                if let Some(ga) = self.buf(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v * *s);
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = self.buf(grads, *a) {
                    for ((d, &v), &x) in ga.iter_mut().zip(g).zip(self.value(*a)) {
                        if x > T::zero() {
                            *d += v;
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                if let Some(ga) = self.buf(grads, *a) {
                    for ((d, &v), &x) in ga.iter_mut().zip(g).zip(self.value(*a)) {
                        *d += v * kernels::gelu_grad(x);
                    }
                }
            }
            Op::RowSoftmax(a) => {
                if let Some(ga) = self.buf(grads, *a) {
                    let (_, cols) = rows_cols(&node.shape);
                    for ((d, gy), y) in ga.chunks_exact_mut(cols).zip(g.chunks_exact(cols)).zip(node.value.chunks_exact(cols)) {
                        let s = kernels::dot(gy, y);
                        for c in 0..cols {
                            d[c] += y[c] * (gy[c] - s);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (_, cols) = rows_cols(&node.shape);
                let n = T::of(cols as f64);
                if let Some(gx) = self.buf(grads, *x) {
                    let gamma = self.value(*gain);
                    for (r, (d, gy)) in gx.chunks_exact_mut(cols).zip(g.chunks_exact(cols)).enumerate() {
                        let h = &xhat[r * cols..(r + 1) * cols];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for c in 0..cols {
                            let dh = gy[c] * gamma[c];
                            m1 += dh;
                            m2 += dh * h[c];
                        }
                        m1 /= n;
                        m2 /= n;
                        for c in 0..cols {
                            d[c] += rstd[r] * (gy[c] * gamma[c] - m1 - h[c] * m2);
                        }
                    }
                }
                if let Some(gg) = self.buf(grads, *gain) {
                    for (gy, h) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                        for c in 0..cols {
                            gg[c] += gy[c] * h[c];
                        }
                    }
                }
                if let Some(gb) = self.buf(grads, *bias) {
                    for gy in g.chunks_exact(cols) {
                        gb.iter_mut().zip(gy).for_each(|(d, &v)| *d += v);
                    }
                }
            }
            Op::ConcatLastDim(parts) => {
                let (rows, total) = rows_cols(&node.shape);
                let mut offset = 0;
                for &p in parts {
                    let (_, c) = rows_cols(self.shape(p));
                    if let Some(gp) = self.buf(grads, p) {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            gp[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if let Some(gp) = self.buf(grads, p) {
                        gp.iter_mut().zip(&g[offset..offset + len]).for_each(|(d, &v)| *d += v);
                    }
                    offset += len;
                }
            }
            Op::SliceLastDim { a, start } => {
                let (_, len) = rows_cols(&node.shape);
                let (_, cols) = rows_cols(self.shape(*a));
                if let Some(ga) = self.buf(grads, *a) {
                    for (d, src) in ga.chunks_exact_mut(cols).zip(g.chunks_exact(len)) {
                        d[*start..*start + len].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                    }
                }
            }
            Op::MaxOverAxis { a, outer, len, inner, argmax } => {
                if let Some(ga) = self.buf(grads, *a) {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let j = argmax[o * inner + i] as usize;
                            ga[(o * len + j) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            }
            Op::MeanOverAxis { a, outer, len, inner } => {
                if let Some(ga) = self.buf(grads, *a) {
                    let scale = T::one() / T::of(*len as f64);
                    for o in 0..*outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for j in 0..*len {
                            let dst = &mut ga[(o * len + j) * inner..(o * len + j + 1) * inner];
                            dst.iter_mut().zip(src).for_each(|(d, &v)| *d += v * scale);
                        }
                    }
                }
            }
            Op::Gather { table, indices } => {
                let cols = node.shape[1];
                if let Some(gt) = self.buf(grads, *table) {
                    for (r, &i) in indices.iter().enumerate() {
                        let src = &g[r * cols..(r + 1) * cols];
                        gt[i * cols..(i + 1) * cols].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if let Some(gl) = self.buf(grads, *logits) {
                    let cols = probs.len() / labels.len();
                    let scale = g[0] / T::of(labels.len() as f64);
                    for (r, &l) in labels.iter().enumerate() {
                        for c in 0..cols {
                            let y = if c == l { T::one() } else { T::zero() };
                            gl[r * cols + c] += scale * (probs[r * cols + c] - y);
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.buf(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.buf(grads, *a) {
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
        }
    }
}
