//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node whose parents already exist, so node
//! index order is a topological order and the backward pass is a single
//! reverse sweep. Leaves either borrow model parameters (no copy) or own
//! their values.

use std::borrow::Cow;
use std::collections::HashMap;

use super::tensor::{gemm, Tensor};
use super::TensorError;

/// Lower clamp applied to `log` inputs and to probabilities fed to the BCE node.
pub const LOG_CLAMP: f64 = 1e-12;

const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index of a trainable tensor inside a parameter store.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Tanh,
    Sigmoid,
    /// Natural log with the input clamped below at [`LOG_CLAMP`].
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Detach,
    MatMul {
        a: NodeId,
        b: NodeId,
        a_t: bool,
        b_t: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Binary {
        kind: Binary,
        a: NodeId,
        b: NodeId,
        map: Broadcast,
    },
    Scale(NodeId, f64),
    Unary(NodeId, Unary),
    Softmax(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        a: NodeId,
        idx: Vec<usize>,
    },
    SliceCols {
        a: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    Reshape(NodeId),
    Sum(NodeId),
    MeanRows(NodeId),
    Conv1d {
        input: NodeId,
        filters: NodeId,
        window: usize,
        left: usize,
    },
    MaxPool {
        a: NodeId,
        argmax: Vec<usize>,
        over_cols: bool,
    },
    Bce {
        probs: NodeId,
        targets: Vec<f64>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Index maps for a broadcast binary op: for every output element, the flat
/// positions it reads in each operand.
#[derive(Debug)]
struct Broadcast {
    a_idx: Option<Vec<usize>>,
    b_idx: Option<Vec<usize>>,
}

impl Broadcast {
    fn resolve(a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Self), TensorError> {
        if a == b {
            return Ok((
                a.to_vec(),
                Self {
                    a_idx: None,
                    b_idx: None,
                },
            ));
        }
        let rank = a.len().max(b.len());
        let pad = |s: &[usize]| {
            let mut p = vec![1; rank - s.len()];
            p.extend_from_slice(s);
            p
        };
        let (pa, pb) = (pad(a), pad(b));
        let mut out = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x == y || y == 1 {
                out.push(x);
            } else if x == 1 {
                out.push(y);
            } else {
                return Err(TensorError::Broadcast {
                    left: a.to_vec(),
                    right: b.to_vec(),
                });
            }
        }
        let index_map = |p: &[usize]| -> Option<Vec<usize>> {
            if p == out.as_slice() {
                return None;
            }
            let mut strides = vec![0; rank];
            let mut s = 1;
            for d in (0..rank).rev() {
                strides[d] = if p[d] == 1 { 0 } else { s };
                s *= p[d];
            }
            let numel: usize = out.iter().product();
            let mut idx = Vec::with_capacity(numel);
            let mut counter = vec![0usize; rank];
            for _ in 0..numel {
                idx.push(counter.iter().zip(&strides).map(|(c, s)| c * s).sum());
                for d in (0..rank).rev() {
                    counter[d] += 1;
                    if counter[d] < out[d] {
                        break;
                    }
                    counter[d] = 0;
                }
            }
            Some(idx)
        };
        let map = Self {
            a_idx: index_map(&pa),
            b_idx: index_map(&pb),
        };
        Ok((out, map))
    }

    #[inline]
    fn a(&self, i: usize) -> usize {
        self.a_idx.as_ref().map_or(i, |v| v[i])
    }

    #[inline]
    fn b(&self, i: usize) -> usize {
        self.b_idx.as_ref().map_or(i, |v| v[i])
    }
}

/// Computation graph recorded during a forward pass.
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    params: HashMap<ParamId, NodeId>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, parents: &[NodeId]) -> NodeId {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// A leaf that takes no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// A leaf owning its value; gradients are tracked when `requires_grad`.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    /// The leaf for a borrowed model parameter. Repeated calls with the same
    /// id return the same node so gradients accumulate in one place.
    pub fn param(&mut self, id: ParamId, value: &'a Tensor) -> NodeId {
        if let Some(&node) = self.params.get(&id) {
            return node;
        }
        let node = self.push(Cow::Borrowed(value), Op::Leaf, true);
        self.params.insert(id, node);
        node
    }

    /// Copy of `a` through which no gradient flows.
    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        self.push(Cow::Owned(v), Op::Detach, false)
    }

    /// `op(a) · op(b)` for 2-D operands, with optional transposition of either side.
    pub fn matmul_ext(
        &mut self,
        a: NodeId,
        a_t: bool,
        b: NodeId,
        b_t: bool,
    ) -> Result<NodeId, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(TensorError::MatMul {
                left: sa,
                right: sb,
            });
        }
        let (m, k) = if a_t { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if b_t { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return Err(TensorError::MatMul {
                left: sa,
                right: sb,
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            a_t,
            self.value(b).data(),
            b_t,
            &mut out,
            false,
        );
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(
            value,
            Op::MatMul {
                a,
                b,
                a_t,
                b_t,
                m,
                k,
                n,
            },
            &[a, b],
        ))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.matmul_ext(a, false, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.matmul_ext(a, false, b, true)
    }

    fn binary(&mut self, kind: Binary, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (shape, map) = Broadcast::resolve(self.shape(a), self.shape(b))?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|i| {
                let (x, y) = (va[map.a(i)], vb[map.b(i)]);
                match kind {
                    Binary::Add => x + y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(value, Op::Binary { kind, a, b, map }, &[a, b]))
    }

    /// Elementwise sum with broadcasting along size-1 (or missing leading) axes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary(Binary::Add, a, b)
    }

    /// Elementwise product with broadcasting along size-1 (or missing leading) axes.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a);
        let data = v.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.derived(value, Op::Scale(a, factor), &[a])
    }

    pub fn unary(&mut self, a: NodeId, kind: Unary) -> NodeId {
        let v = self.value(a);
        let data = v
            .data()
            .iter()
            .map(|&x| match kind {
                Unary::Relu => x.max(0.0),
                Unary::Tanh => x.tanh(),
                Unary::Sigmoid => sigmoid(x),
                Unary::Log => x.max(LOG_CLAMP).ln(),
            })
            .collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.derived(value, Op::Unary(a, kind), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Relu)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Log)
    }

    /// Softmax along the last axis. Columns whose `mask` entry is false get
    /// exactly zero weight in every row.
    pub fn softmax(&mut self, a: NodeId, mask: Option<Vec<bool>>) -> Result<NodeId, TensorError> {
        let v = self.value(a);
        let (rows, cols) = (v.rows(), v.cols());
        if let Some(m) = &mask {
            if m.len() != cols {
                return Err(TensorError::Mask {
                    expected: cols,
                    got: m.len(),
                });
            }
        }
        let keep = |j: usize| mask.as_ref().is_none_or(|m| m[j]);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &v.data()[r * cols..(r + 1) * cols];
            let max = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let dst = &mut out[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for j in 0..cols {
                if keep(j) {
                    dst[j] = (row[j] - max).exp();
                    total += dst[j];
                }
            }
            dst.iter_mut().for_each(|x| *x /= total);
        }
        let value = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.derived(value, Op::Softmax(a), &[a]))
    }

    /// Layer normalization over the last axis with learned `gain` and `bias`
    /// (both of length equal to the last dimension).
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, TensorError> {
        let v = self.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        for p in [gain, bias] {
            if self.value(p).numel() != cols {
                return Err(TensorError::Broadcast {
                    left: v.shape().to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut normed = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &v.data()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..cols {
                let n = (row[j] - mean) * is;
                normed[r * cols + j] = n;
                out[r * cols + j] = n * g[j] + b[j];
            }
        }
        let value = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.derived(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Rows of a 2-D tensor picked by index (embedding lookup, slicing, repetition).
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId, TensorError> {
        let v = self.value(a);
        let (rows, cols) = (v.rows(), v.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(TensorError::Index { index: bad, len: rows });
        }
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(v.row(i));
        }
        let value = Tensor::new(vec![idx.len(), cols], out)?;
        Ok(self.derived(
            value,
            Op::GatherRows {
                a,
                idx: idx.to_vec(),
            },
            &[a],
        ))
    }

    pub fn slice_rows(
        &mut self,
        a: NodeId,
        range: std::ops::Range<usize>,
    ) -> Result<NodeId, TensorError> {
        let idx: Vec<usize> = range.collect();
        self.gather_rows(a, &idx)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, TensorError> {
        let v = self.value(a);
        let (rows, cols) = (v.rows(), v.cols());
        if start + len > cols {
            return Err(TensorError::Index {
                index: start + len,
                len: cols,
            });
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v.row(r)[start..start + len]);
        }
        let value = Tensor::new(vec![rows, len], out)?;
        Ok(self.derived(value, Op::SliceCols { a, start }, &[a]))
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(TensorError::Concat {
                    shapes: parts.iter().map(|&q| self.shape(q).to_vec()).collect(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], out)?;
        Ok(self.derived(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.derived(value, Op::Reshape(a), &[a]))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.derived(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Column means of a 2-D tensor, shape `[1, cols]`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(a);
        let (rows, cols) = (v.rows(), v.cols());
        if rows == 0 {
            return Err(TensorError::EmptyAxis { axis: 0 });
        }
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, x) in out.iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= rows as f64);
        let value = Tensor::new(vec![1, cols], out)?;
        Ok(self.derived(value, Op::MeanRows(a), &[a]))
    }

    /// Same-padded 1-D convolution along the row (word) axis.
    ///
    /// `input` is `m×C`, `filters` is `F×window×C`; the output is `m×F` with
    /// `out[i,f] = Σ_t Σ_c filters[f,t,c] · input[i+t-left, c]`, zero outside
    /// the input, where `left = window / 2` (an even window pads one more
    /// position on the left than on the right).
    pub fn conv1d(
        &mut self,
        input: NodeId,
        filters: NodeId,
        window: usize,
    ) -> Result<NodeId, TensorError> {
        let sx = self.shape(input).to_vec();
        let sf = self.shape(filters).to_vec();
        if sx.len() != 2 || sf.len() != 3 || sf[1] != window || sf[2] != sx[1] {
            return Err(TensorError::Conv {
                input: sx,
                filters: sf,
                window,
            });
        }
        let (m, f) = (sx[0], sf[0]);
        let padded = m + window.saturating_sub(1);
        if window == 0 || window > padded {
            return Err(TensorError::Window { window, padded });
        }
        let left = window / 2;
        let cols = im2col(self.value(input).data(), m, sx[1], window, left);
        let mut out = vec![0.0; m * f];
        gemm(
            m,
            window * sx[1],
            f,
            &cols,
            false,
            self.value(filters).data(),
            true,
            &mut out,
            false,
        );
        let value = Tensor::new(vec![m, f], out)?;
        Ok(self.derived(
            value,
            Op::Conv1d {
                input,
                filters,
                window,
                left,
            },
            &[input, filters],
        ))
    }

    /// Maximum along `axis` of a 1-D or 2-D tensor; the axis is removed.
    /// Ties resolve to the first maximal index.
    pub fn max_pool(&mut self, a: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        let v = self.value(a);
        let shape = v.shape().to_vec();
        let (rows, cols) = match shape.len() {
            1 => (1, shape[0]),
            2 => (shape[0], shape[1]),
            _ => return Err(TensorError::Axis { axis, shape }),
        };
        if axis >= shape.len() {
            return Err(TensorError::Axis { axis, shape });
        }
        if shape[axis] == 0 {
            return Err(TensorError::EmptyAxis { axis });
        }
        // Reduce over columns when the axis is the last one, otherwise over rows.
        let over_cols = axis == shape.len() - 1;
        let (outer, inner) = if over_cols { (rows, cols) } else { (cols, rows) };
        let at = |o: usize, i: usize| if over_cols { o * cols + i } else { i * cols + o };
        let mut out = Vec::with_capacity(outer);
        let mut argmax = Vec::with_capacity(outer);
        for o in 0..outer {
            let mut best = at(o, 0);
            for i in 1..inner {
                if v.data()[at(o, i)] > v.data()[best] {
                    best = at(o, i);
                }
            }
            out.push(v.data()[best]);
            argmax.push(best);
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.derived(
            value,
            Op::MaxPool {
                a,
                argmax,
                over_cols,
            },
            &[a],
        ))
    }

    /// Summed binary cross-entropy `−Σ [q ln p + (1−q) ln(1−p)]` with `p`
    /// clamped into `[LOG_CLAMP, 1 − LOG_CLAMP]`.
    pub fn bce(&mut self, probs: NodeId, targets: &[f64]) -> Result<NodeId, TensorError> {
        let v = self.value(probs);
        if v.numel() != targets.len() {
            return Err(TensorError::Broadcast {
                left: v.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let loss = bce_value(v.data(), targets);
        Ok(self.derived(
            Tensor::scalar(loss),
            Op::Bce {
                probs,
                targets: targets.to_vec(),
            },
            &[probs],
        ))
    }

    /// Smallest distance from any relu input to zero, or between the top two
    /// candidates of any max-pool slice. Finite-difference checks are only
    /// meaningful when this exceeds the probe step.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Unary(a, Unary::Relu) => {
                    for x in self.value(*a).data() {
                        margin = margin.min(x.abs());
                    }
                }
                Op::MaxPool {
                    a,
                    argmax,
                    over_cols,
                } => {
                    let v = self.value(*a);
                    let (rows, cols) = (v.rows(), v.cols());
                    for (o, &best) in argmax.iter().enumerate() {
                        let members: Vec<usize> = if *over_cols {
                            (0..cols).map(|i| o * cols + i).collect()
                        } else {
                            (0..rows).map(|i| i * cols + o).collect()
                        };
                        for idx in members {
                            if idx != best {
                                margin = margin.min(v.data()[best] - v.data()[idx]);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Reverse sweep from a one-element `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let mut params: Vec<(ParamId, NodeId)> =
            self.params.iter().map(|(&p, &n)| (p, n)).collect();
        params.sort();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.as_ref();
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::MatMul {
                a,
                b,
                a_t,
                b_t,
                m,
                k,
                n,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let da = slot(grads, *a, m * k);
                    if *a_t {
                        gemm(k, n, m, vb, *b_t, g, true, da, true);
                    } else {
                        gemm(m, n, k, g, false, vb, !*b_t, da, true);
                    }
                }
                if self.requires_grad(*b) {
                    let db = slot(grads, *b, k * n);
                    if *b_t {
                        gemm(n, m, k, g, true, va, *a_t, db, true);
                    } else {
                        gemm(k, m, n, va, !*a_t, g, false, db, true);
                    }
                }
            }
            Op::Binary { kind, a, b, map } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let da = slot(grads, *a, va.len());
                    for (o, &go) in g.iter().enumerate() {
                        da[map.a(o)] += match kind {
                            Binary::Add => go,
                            Binary::Mul => go * vb[map.b(o)],
                        };
                    }
                }
                if self.requires_grad(*b) {
                    let db = slot(grads, *b, vb.len());
                    for (o, &go) in g.iter().enumerate() {
                        db[map.b(o)] += match kind {
                            Binary::Add => go,
                            Binary::Mul => go * va[map.a(o)],
                        };
                    }
                }
            }
            Op::Scale(a, f) => {
                let da = slot(grads, *a, g.len());
                for (d, go) in da.iter_mut().zip(g) {
                    *d += go * f;
                }
            }
            Op::Unary(a, kind) => {
                let x = self.value(*a).data();
                let y = out.data();
                let da = slot(grads, *a, g.len());
                for j in 0..g.len() {
                    let local = match kind {
                        Unary::Relu => {
                            if x[j] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Tanh => 1.0 - y[j] * y[j],
                        Unary::Sigmoid => y[j] * (1.0 - y[j]),
                        Unary::Log => {
                            if x[j] > LOG_CLAMP {
                                1.0 / x[j]
                            } else {
                                0.0
                            }
                        }
                    };
                    da[j] += g[j] * local;
                }
            }
            Op::Softmax(a) => {
                let cols = out.cols();
                let y = out.data();
                let da = slot(grads, *a, g.len());
                for r in 0..out.rows() {
                    let span = r * cols..(r + 1) * cols;
                    let dot: f64 = g[span.clone()]
                        .iter()
                        .zip(&y[span.clone()])
                        .map(|(a, b)| a * b)
                        .sum();
                    for j in span {
                        da[j] += y[j] * (g[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let cols = out.cols();
                let rows = out.rows();
                let gv = self.value(*gain).data();
                if self.requires_grad(*gain) {
                    let dg = slot(grads, *gain, cols);
                    for r in 0..rows {
                        for j in 0..cols {
                            dg[j] += g[r * cols + j] * normed[r * cols + j];
                        }
                    }
                }
                if self.requires_grad(*bias) {
                    let db = slot(grads, *bias, cols);
                    for r in 0..rows {
                        for j in 0..cols {
                            db[j] += g[r * cols + j];
                        }
                    }
                }
                if self.requires_grad(*x) {
                    let dx = slot(grads, *x, rows * cols);
                    let nf = cols as f64;
                    for r in 0..rows {
                        let span = r * cols..(r + 1) * cols;
                        let mut sum_d = 0.0;
                        let mut sum_dn = 0.0;
                        for j in span.clone() {
                            let d = g[j] * gv[j - r * cols];
                            sum_d += d;
                            sum_dn += d * normed[j];
                        }
                        for j in span {
                            let d = g[j] * gv[j - r * cols];
                            dx[j] += inv_std[r] / nf * (nf * d - sum_d - normed[j] * sum_dn);
                        }
                    }
                }
            }
            Op::GatherRows { a, idx } => {
                let src = self.value(*a);
                let cols = src.cols();
                let da = slot(grads, *a, src.numel());
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..cols {
                        da[i * cols + j] += g[r * cols + j];
                    }
                }
            }
            Op::SliceCols { a, start } => {
                let src = self.value(*a);
                let (cols, len) = (src.cols(), out.cols());
                let da = slot(grads, *a, src.numel());
                for r in 0..out.rows() {
                    for j in 0..len {
                        da[r * cols + start + j] += g[r * len + j];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.requires_grad(p) {
                        let dp = slot(grads, p, self.value(p).numel());
                        for r in 0..out.rows() {
                            for j in 0..pc {
                                dp[r * pc + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::Reshape(a) => {
                let da = slot(grads, *a, g.len());
                for (d, go) in da.iter_mut().zip(g) {
                    *d += go;
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                let da = slot(grads, *a, n);
                da.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::MeanRows(a) => {
                let src = self.value(*a);
                let (rows, cols) = (src.rows(), src.cols());
                let da = slot(grads, *a, src.numel());
                for r in 0..rows {
                    for j in 0..cols {
                        da[r * cols + j] += g[j] / rows as f64;
                    }
                }
            }
            Op::Conv1d {
                input,
                filters,
                window,
                left,
            } => {
                let x = self.value(*input);
                let (m, c) = (x.rows(), x.cols());
                let f = out.cols();
                let width = window * c;
                if self.requires_grad(*filters) {
                    let cols = im2col(x.data(), m, c, *window, *left);
                    let df = slot(grads, *filters, f * width);
                    gemm(f, m, width, g, true, &cols, false, df, true);
                }
                if self.requires_grad(*input) {
                    let mut dcols = vec![0.0; m * width];
                    gemm(
                        m,
                        f,
                        width,
                        g,
                        false,
                        self.value(*filters).data(),
                        false,
                        &mut dcols,
                        false,
                    );
                    let dx = slot(grads, *input, m * c);
                    for i in 0..m {
                        for t in 0..*window {
                            let src = i + t;
                            if src < *left || src - left >= m {
                                continue;
                            }
                            let row = src - left;
                            for ch in 0..c {
                                dx[row * c + ch] += dcols[i * width + t * c + ch];
                            }
                        }
                    }
                }
            }
            Op::MaxPool { a, argmax, .. } => {
                let da = slot(grads, *a, self.value(*a).numel());
                for (o, &src) in argmax.iter().enumerate() {
                    da[src] += g[o];
                }
            }
            Op::Bce { probs, targets } => {
                let p = self.value(*probs).data();
                let dp = slot(grads, *probs, p.len());
                for j in 0..p.len() {
                    if p[j] < LOG_CLAMP || p[j] > 1.0 - LOG_CLAMP {
                        continue;
                    }
                    let q = targets[j];
                    dp[j] += g[0] * (-q / p[j] + (1.0 - q) / (1.0 - p[j]));
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn im2col(x: &[f64], m: usize, c: usize, window: usize, left: usize) -> Vec<f64> {
    let width = window * c;
    let mut cols = vec![0.0; m * width];
    for i in 0..m {
        for t in 0..window {
            let src = i + t;
            if src < left || src - left >= m {
                continue;
            }
            let row = src - left;
            cols[i * width + t * c..i * width + (t + 1) * c]
                .copy_from_slice(&x[row * c..(row + 1) * c]);
        }
    }
    cols
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Summed binary cross-entropy with clamped probabilities.
pub fn bce_value(probs: &[f64], targets: &[f64]) -> f64 {
    -probs
        .iter()
        .zip(targets)
        .map(|(&p, &q)| {
            let p = p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
            q * p.ln() + (1.0 - q) * (1.0 - p).ln()
        })
        .sum::<f64>()
}

/// Gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, NodeId)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a node; `None` if the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, n)| self.get(*n))
    }

    /// Adds every parameter gradient into `acc`, indexed by `ParamId`.
    pub fn accumulate_into(&self, acc: &mut [Vec<f64>]) {
        for &(p, n) in &self.params {
            if let Some(g) = self.get(n) {
                for (a, x) in acc[p.0].iter_mut().zip(g) {
                    *a += x;
                }
            }
        }
    }
}
