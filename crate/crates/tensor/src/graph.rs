//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradients of every leaf created with [`Graph::param`]. A graph can be
//! differentiated once; build a fresh graph for every step.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;

use rand::Rng;

use crate::kernels::{self, ConvGeometry};
use crate::{Real, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeometry, cols: Vec<T> },
    GlobalAvgPool(Var),
    Embedding { table: Var, indices: Vec<usize>, padding: Option<usize> },
    SegmentSum { x: Var, segment: usize },
    Mask { x: Var, mask: Vec<T> },
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<T>, probs: Vec<T>, total_weight: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, keyed by leaf handle.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: HashMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.remove(&v)
    }
}

pub struct Graph<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    differentiated: Cell<bool>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), differentiated: Cell::new(false) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Copies `v` into a new constant, cutting the gradient path.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v);
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn value_ref(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn push_raw(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var(nodes.len() - 1)
    }

    fn push(&self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].requires_grad)
        };
        Ok(self.push_raw(value, op, requires_grad))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (va, vb) = (self.value_ref(a), self.value_ref(b));
            if va.shape() != vb.shape() {
                return Err(shape_err("add", format!("{:?} vs {:?}", va.shape(), vb.shape())));
            }
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
            Tensor::new(va.shape(), data)?
        };
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    /// Adds a length-`d` row vector to every row of an `n×d` matrix.
    pub fn add_row(&self, x: Var, row: Var) -> Result<Var> {
        let out = {
            let (vx, vr) = (self.value_ref(x), self.value_ref(row));
            let (n, d) = vx.dims2()?;
            if vr.numel() != d {
                return Err(shape_err("add_row", format!("{:?} + {:?}", vx.shape(), vr.shape())));
            }
            let mut data = vx.data().to_vec();
            for r in 0..n {
                for (o, &b) in data[r * d..(r + 1) * d].iter_mut().zip(vr.data()) {
                    *o += b;
                }
            }
            Tensor::new(vx.shape(), data)?
        };
        self.push("add_row", out, Op::AddRow(x, row), &[x, row])
    }

    /// Element-wise product of equally shaped tensors.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (va, vb) = (self.value_ref(a), self.value_ref(b));
            if va.shape() != vb.shape() {
                return Err(shape_err("mul", format!("{:?} vs {:?}", va.shape(), vb.shape())));
            }
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
            Tensor::new(va.shape(), data)?
        };
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&self, x: Var, c: T) -> Result<Var> {
        let out = self.value_ref(x).map(|v| v * c);
        self.push("scale", out, Op::Scale(x, c), &[x])
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let (va, vb) = (self.value_ref(a), self.value_ref(b));
            let ((m, k), (k2, n)) = (va.dims2()?, vb.dims2()?);
            if va.rank() != 2 || vb.rank() != 2 || k != k2 {
                return Err(shape_err("matmul", format!("{:?} · {:?}", va.shape(), vb.shape())));
            }
            let mut data = vec![T::zero(); m * n];
            kernels::matmul_acc(va.data(), vb.data(), &mut data, m, k, n);
            Tensor::new(&[m, n], data)?
        };
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let out = {
            let vx = self.value_ref(x);
            let (r, c) = vx.dims2()?;
            let mut data = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = vx.data()[i * c + j];
                }
            }
            Tensor::new(&[c, r], data)?
        };
        self.push("transpose", out, Op::Transpose(x), &[x])
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        let out = self.value_ref(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", out, Op::Relu(x), &[x])
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&self, x: Var) -> Result<Var> {
        let out = {
            let vx = self.value_ref(x);
            let cols = *vx.shape().last().ok_or_else(|| shape_err("softmax", "rank 0".into()))?;
            let mut data = vx.data().to_vec();
            if cols > 0 {
                for row in data.chunks_mut(cols) {
                    softmax_in_place(row);
                }
            }
            Tensor::new(vx.shape(), data)?
        };
        self.push("softmax", out, Op::Softmax(x), &[x])
    }

    /// Row-wise layer normalization (population variance) with affine `gamma`, `beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (out, xhat, inv_std) = {
            let (vx, vg, vb) = (self.value_ref(x), self.value_ref(gamma), self.value_ref(beta));
            let (n, d) = vx.dims2()?;
            if d == 0 || vg.numel() != d || vb.numel() != d {
                return Err(shape_err(
                    "layer_norm",
                    format!("x {:?}, gamma {:?}, beta {:?}", vx.shape(), vg.shape(), vb.shape()),
                ));
            }
            let dn = T::from_usize(d).unwrap();
            let mut xhat = vec![T::zero(); n * d];
            let mut inv_std = vec![T::zero(); n];
            let mut out = vec![T::zero(); n * d];
            for r in 0..n {
                let row = &vx.data()[r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<T>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                let is = T::one() / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..d {
                    let h = (row[j] - mean) * is;
                    xhat[r * d + j] = h;
                    out[r * d + j] = vg.data()[j] * h + vb.data()[j];
                }
            }
            (Tensor::new(vx.shape(), out)?, xhat, inv_std)
        };
        self.push("layer_norm", out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta])
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = {
            let vx = self.value_ref(x);
            let (n, d) = vx.dims2()?;
            if start + len > d {
                return Err(shape_err("slice_cols", format!("{start}..{} of {d}", start + len)));
            }
            let mut data = Vec::with_capacity(n * len);
            for r in 0..n {
                data.extend_from_slice(&vx.data()[r * d + start..r * d + start + len]);
            }
            Tensor::new(&[n, len], data)?
        };
        self.push("slice_cols", out, Op::SliceCols { x, start }, &[x])
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let dims = parts
                .iter()
                .map(|v| nodes[v.0].value.dims2())
                .collect::<Result<Vec<_>>>()?;
            let n = dims.first().map_or(0, |d| d.0);
            if dims.iter().any(|d| d.0 != n) {
                return Err(shape_err("concat_cols", format!("row counts {dims:?}")));
            }
            let total: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(n * total);
            for r in 0..n {
                for v in parts {
                    data.extend_from_slice(nodes[v.0].value.row(r));
                }
            }
            Tensor::new(&[n, total], data)?
        };
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let dims = parts
                .iter()
                .map(|v| nodes[v.0].value.dims2())
                .collect::<Result<Vec<_>>>()?;
            let d = dims.first().map_or(0, |d| d.1);
            if dims.iter().any(|x| x.1 != d) {
                return Err(shape_err("concat_rows", format!("column counts {dims:?}")));
            }
            let rows: usize = dims.iter().map(|x| x.0).sum();
            let mut data = Vec::with_capacity(rows * d);
            for v in parts {
                data.extend_from_slice(nodes[v.0].value.data());
            }
            Tensor::new(&[rows, d], data)?
        };
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    /// Valid strided cross-correlation of an `N×C×H×W` batch (or a single
    /// `C×H×W` image) with `Co×C×k×k` kernels plus a per-channel bias.
    pub fn conv2d(&self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (out, geom, cols) = {
            let (vx, vw, vb) = (self.value_ref(x), self.value_ref(w), self.value_ref(b));
            let (batch, c, h, wd) = match vx.shape() {
                [n, c, h, w] => (Some(*n), *c, *h, *w),
                [c, h, w] => (None, *c, *h, *w),
                s => return Err(shape_err("conv2d", format!("input {s:?}"))),
            };
            let (co, k) = match vw.shape() {
                [co, ci, k1, k2] if *ci == c && k1 == k2 => (*co, *k1),
                s => return Err(shape_err("conv2d", format!("kernel {s:?} for {c} input channels"))),
            };
            if vb.numel() != co || stride == 0 || k == 0 || k > h || k > wd {
                return Err(shape_err(
                    "conv2d",
                    format!("bias {:?}, kernel {k}, stride {stride}, input {h}×{wd}", vb.shape()),
                ));
            }
            let geom = ConvGeometry { in_channels: c, height: h, width: wd, kernel: k, stride };
            let (pl, p) = (geom.patch_len(), geom.positions());
            let n = batch.unwrap_or(1);
            let mut cols = vec![T::zero(); n * pl * p];
            let mut out = vec![T::zero(); n * co * p];
            for s in 0..n {
                let xs = &vx.data()[s * c * h * wd..(s + 1) * c * h * wd];
                let cs = &mut cols[s * pl * p..(s + 1) * pl * p];
                kernels::im2col(xs, &geom, cs);
                let os = &mut out[s * co * p..(s + 1) * co * p];
                for (ch, &bias) in vb.data().iter().enumerate() {
                    os[ch * p..(ch + 1) * p].fill(bias);
                }
                kernels::matmul_acc(vw.data(), cs, os, co, pl, p);
            }
            let shape = match batch {
                Some(n) => vec![n, co, geom.out_height(), geom.out_width()],
                None => vec![co, geom.out_height(), geom.out_width()],
            };
            (Tensor::new(&shape, out)?, geom, cols)
        };
        self.push("conv2d", out, Op::Conv2d { x, w, b, geom, cols }, &[x, w, b])
    }

    /// Mean over the spatial axes: `N×C×H×W → N×C` or `C×H×W → C`.
    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let out = {
            let vx = self.value_ref(x);
            let (lead, hw) = match vx.shape() {
                [n, c, h, w] => (vec![*n, *c], h * w),
                [c, h, w] => (vec![*c], h * w),
                s => return Err(shape_err("global_avg_pool", format!("{s:?}"))),
            };
            if hw == 0 {
                return Err(shape_err("global_avg_pool", "empty spatial extent".into()));
            }
            let denom = T::from_usize(hw).unwrap();
            let data = vx.data().chunks(hw).map(|p| p.iter().copied().sum::<T>() / denom).collect();
            Tensor::new(&lead, data)?
        };
        self.push("global_avg_pool", out, Op::GlobalAvgPool(x), &[x])
    }

    /// Gathers rows of a `V×d` table. The `padding` index reads as a zero row
    /// and never receives a gradient.
    pub fn embedding(&self, table: Var, indices: &[usize], padding: Option<usize>) -> Result<Var> {
        let out = {
            let vt = self.value_ref(table);
            let (v, d) = vt.dims2()?;
            let mut data = Vec::with_capacity(indices.len() * d);
            for &i in indices {
                if i >= v {
                    return Err(TensorError::IndexOutOfBounds { op: "embedding", index: i, bound: v });
                }
                if Some(i) == padding {
                    data.resize(data.len() + d, T::zero());
                } else {
                    data.extend_from_slice(vt.row(i));
                }
            }
            Tensor::new(&[indices.len(), d], data)?
        };
        let op = Op::Embedding { table, indices: indices.to_vec(), padding };
        self.push("embedding", out, op, &[table])
    }

    /// Sums consecutive blocks of `segment` rows: `(n·segment)×d → n×d`.
    pub fn segment_sum(&self, x: Var, segment: usize) -> Result<Var> {
        let out = {
            let vx = self.value_ref(x);
            let (rows, d) = vx.dims2()?;
            if segment == 0 || rows % segment != 0 {
                return Err(shape_err("segment_sum", format!("{rows} rows in segments of {segment}")));
            }
            let n = rows / segment;
            let mut data = vec![T::zero(); n * d];
            for r in 0..rows {
                let dst = &mut data[(r / segment) * d..(r / segment + 1) * d];
                for (o, &v) in dst.iter_mut().zip(vx.row(r)) {
                    *o += v;
                }
            }
            Tensor::new(&[n, d], data)?
        };
        self.push("segment_sum", out, Op::SegmentSum { x, segment }, &[x])
    }

    /// Inverted dropout. Identity when not training or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Contract(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.value_ref(x).numel();
        let mask: Vec<T> = (0..n).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        let out = {
            let vx = self.value_ref(x);
            let data = vx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            Tensor::new(vx.shape(), data)?
        };
        self.push("dropout", out, Op::Mask { x, mask }, &[x])
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let total = self.value_ref(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Class-weighted mean cross-entropy of `n×K` logits against class indices:
    /// `Σᵢ w[tᵢ]·(−log softmax(logitsᵢ)[tᵢ]) / Σᵢ w[tᵢ]`.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize], class_weights: &[T]) -> Result<Var> {
        let (loss, probs, weights, total_weight) = {
            let vl = self.value_ref(logits);
            let (n, k) = vl.dims2()?;
            if targets.len() != n || class_weights.len() != k {
                return Err(shape_err(
                    "cross_entropy",
                    format!("{n}×{k} logits, {} targets, {} weights", targets.len(), class_weights.len()),
                ));
            }
            let mut probs = vl.data().to_vec();
            let mut weights = Vec::with_capacity(n);
            let mut total_weight = T::zero();
            let mut acc = T::zero();
            for (i, &t) in targets.iter().enumerate() {
                if t >= k {
                    return Err(TensorError::IndexOutOfBounds { op: "cross_entropy", index: t, bound: k });
                }
                let row = &vl.data()[i * k..(i + 1) * k];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
                softmax_in_place(&mut probs[i * k..(i + 1) * k]);
                let w = class_weights[t];
                weights.push(w);
                total_weight += w;
                acc += w * (lse - row[t]);
            }
            if total_weight <= T::zero() {
                return Err(TensorError::Contract("cross_entropy needs a positive total weight".into()));
            }
            (acc / total_weight, probs, weights, total_weight)
        };
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), weights, probs, total_weight };
        self.push("cross_entropy", Tensor::scalar(loss), op, &[logits])
    }

    /// Differentiates a scalar and returns gradients for every trainable leaf
    /// it reaches. Errors if the graph was already differentiated.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.differentiated.replace(true) {
            return Err(TensorError::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NotScalar(nodes[loss.0].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            backprop(&nodes, node, &g, &mut grads);
        }

        let mut out = HashMap::new();
        for (id, g) in grads.into_iter().enumerate() {
            let node = &nodes[id];
            if let (Some(g), Op::Leaf, true) = (g, &node.op, node.requires_grad) {
                out.insert(Var(id), Tensor::new(node.value.shape(), g)?);
            }
        }
        Ok(Gradients { grads: out })
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Returns the gradient buffer for `v`, allocating zeros on first touch, or
/// `None` when `v` does not need a gradient.
fn slot<'a, T: Real>(nodes: &[Node<T>], grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]))
}

fn accumulate<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var, g: &[T]) {
    if let Some(dst) = slot(nodes, grads, v) {
        for (d, &x) in dst.iter_mut().zip(g) {
            *d += x;
        }
    }
}

fn backprop<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g);
            accumulate(nodes, grads, *b, g);
        }
        Op::AddRow(x, row) => {
            accumulate(nodes, grads, *x, g);
            if let Some(dst) = slot(nodes, grads, *row) {
                let d = dst.len();
                for chunk in g.chunks(d) {
                    for (o, &v) in dst.iter_mut().zip(chunk) {
                        *o += v;
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a).data(), val(*b).data());
            if let Some(dst) = slot(nodes, grads, *a) {
                for ((o, &gi), &bi) in dst.iter_mut().zip(g).zip(vb) {
                    *o += gi * bi;
                }
            }
            if let Some(dst) = slot(nodes, grads, *b) {
                for ((o, &gi), &ai) in dst.iter_mut().zip(g).zip(va) {
                    *o += gi * ai;
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(dst) = slot(nodes, grads, *x) {
                for (o, &gi) in dst.iter_mut().zip(g) {
                    *o += gi * *c;
                }
            }
        }
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k) = (va.shape()[0], va.shape()[1]);
            let n = vb.shape()[1];
            if let Some(dst) = slot(nodes, grads, *a) {
                kernels::matmul_a_bt_acc(g, vb.data(), dst, m, n, k);
            }
            if let Some(dst) = slot(nodes, grads, *b) {
                kernels::matmul_at_b_acc(va.data(), g, dst, m, k, n);
            }
        }
        Op::Transpose(x) => {
            let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
            if let Some(dst) = slot(nodes, grads, *x) {
                // node is r×c, x is c×r
                for i in 0..r {
                    for j in 0..c {
                        dst[j * r + i] += g[i * c + j];
                    }
                }
            }
        }
        Op::Relu(x) => {
            let out = node.value.data();
            if let Some(dst) = slot(nodes, grads, *x) {
                for ((o, &gi), &y) in dst.iter_mut().zip(g).zip(out) {
                    if y > T::zero() {
                        *o += gi;
                    }
                }
            }
        }
        Op::Softmax(x) => {
            let y = node.value.data();
            let k = *node.value.shape().last().unwrap();
            if let Some(dst) = slot(nodes, grads, *x) {
                for ((drow, grow), yrow) in dst.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
                    let inner: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for ((o, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *o += yi * (gi - inner);
                    }
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let vg = val(*gamma).data();
            let d = vg.len();
            let dn = T::from_usize(d).unwrap();
            if let Some(dst) = slot(nodes, grads, *x) {
                for (r, &is) in inv_std.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut sum_gh = T::zero();
                    let mut sum_ghx = T::zero();
                    for j in 0..d {
                        let gh = gr[j] * vg[j];
                        sum_gh += gh;
                        sum_ghx += gh * hr[j];
                    }
                    for j in 0..d {
                        let gh = gr[j] * vg[j];
                        dst[r * d + j] += is / dn * (dn * gh - sum_gh - hr[j] * sum_ghx);
                    }
                }
            }
            if let Some(dst) = slot(nodes, grads, *gamma) {
                for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        dst[j] += gr[j] * hr[j];
                    }
                }
            }
            if let Some(dst) = slot(nodes, grads, *beta) {
                for gr in g.chunks(d) {
                    for j in 0..d {
                        dst[j] += gr[j];
                    }
                }
            }
        }
        Op::SliceCols { x, start } => {
            let len = node.value.shape()[1];
            let d = val(*x).shape()[1];
            if let Some(dst) = slot(nodes, grads, *x) {
                for (r, gr) in g.chunks(len.max(1)).enumerate().take(node.value.shape()[0]) {
                    for (o, &v) in dst[r * d + start..r * d + start + len].iter_mut().zip(gr) {
                        *o += v;
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let total = node.value.shape()[1];
            let rows = node.value.shape()[0];
            let mut offset = 0;
            for v in parts {
                let w = val(*v).shape()[1];
                if let Some(dst) = slot(nodes, grads, *v) {
                    for r in 0..rows {
                        for j in 0..w {
                            dst[r * w + j] += g[r * total + offset + j];
                        }
                    }
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for v in parts {
                let len = val(*v).numel();
                accumulate(nodes, grads, *v, &g[offset..offset + len]);
                offset += len;
            }
        }
        Op::Reshape(x) => accumulate(nodes, grads, *x, g),
        Op::Conv2d { x, w, b, geom, cols } => {
            let (pl, p) = (geom.patch_len(), geom.positions());
            let vw = val(*w);
            let co = vw.shape()[0];
            let n = cols.len() / (pl * p);
            if let Some(dst) = slot(nodes, grads, *b) {
                for s in 0..n {
                    for ch in 0..co {
                        let base = (s * co + ch) * p;
                        dst[ch] += g[base..base + p].iter().copied().sum::<T>();
                    }
                }
            }
            if let Some(dst) = slot(nodes, grads, *w) {
                for s in 0..n {
                    let gs = &g[s * co * p..(s + 1) * co * p];
                    kernels::matmul_a_bt_acc(gs, &cols[s * pl * p..(s + 1) * pl * p], dst, co, p, pl);
                }
            }
            let image = geom.in_channels * geom.height * geom.width;
            if let Some(dst) = slot(nodes, grads, *x) {
                let mut dcols = vec![T::zero(); pl * p];
                for s in 0..n {
                    dcols.fill(T::zero());
                    let gs = &g[s * co * p..(s + 1) * co * p];
                    kernels::matmul_at_b_acc(vw.data(), gs, &mut dcols, co, pl, p);
                    kernels::col2im_acc(&dcols, geom, &mut dst[s * image..(s + 1) * image]);
                }
            }
        }
        Op::GlobalAvgPool(x) => {
            let vx = val(*x);
            let hw = vx.numel() / node.value.numel().max(1);
            let denom = T::from_usize(hw).unwrap();
            if let Some(dst) = slot(nodes, grads, *x) {
                for (plane, &gi) in dst.chunks_mut(hw).zip(g) {
                    let share = gi / denom;
                    for o in plane {
                        *o += share;
                    }
                }
            }
        }
        Op::Embedding { table, indices, padding } => {
            let d = val(*table).shape()[1];
            if let Some(dst) = slot(nodes, grads, *table) {
                for (r, &i) in indices.iter().enumerate() {
                    if Some(i) == *padding {
                        continue;
                    }
                    for (o, &v) in dst[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *o += v;
                    }
                }
            }
        }
        Op::SegmentSum { x, segment } => {
            let d = node.value.shape()[1];
            if let Some(dst) = slot(nodes, grads, *x) {
                for (r, row) in dst.chunks_mut(d.max(1)).enumerate() {
                    let src = &g[(r / segment) * d..(r / segment + 1) * d];
                    for (o, &v) in row.iter_mut().zip(src) {
                        *o += v;
                    }
                }
            }
        }
        Op::Mask { x, mask } => {
            if let Some(dst) = slot(nodes, grads, *x) {
                for ((o, &gi), &m) in dst.iter_mut().zip(g).zip(mask) {
                    *o += gi * m;
                }
            }
        }
        Op::Sum(x) => {
            if let Some(dst) = slot(nodes, grads, *x) {
                for o in dst.iter_mut() {
                    *o += g[0];
                }
            }
        }
        Op::CrossEntropy { logits, targets, weights, probs, total_weight } => {
            let k = val(*logits).shape()[1];
            let scale = g[0] / *total_weight;
            if let Some(dst) = slot(nodes, grads, *logits) {
                for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    let c = scale * w;
                    for j in 0..k {
                        let onehot = if j == t { T::one() } else { T::zero() };
                        dst[i * k + j] += c * (probs[i * k + j] - onehot);
                    }
                }
            }
        }
    }
}
