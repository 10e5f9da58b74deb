//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs for the backward rule. Nodes are only ever appended, so the node list
//! is a topological order and `backward` simply walks it in reverse.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probability floor inside the cross-entropy logarithm.
pub const CE_FLOOR: f64 = 1e-9;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
    Reshape(Var),
    Gather {
        table: Var,
        indices: Vec<usize>,
        frozen_row: Option<usize>,
    },
    Im2Col {
        x: Var,
        k: usize,
        left: usize,
        lengths: Vec<usize>,
    },
    MaskTime {
        x: Var,
        lengths: Vec<usize>,
    },
    SliceTime {
        x: Var,
        t: usize,
    },
    StackTime(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SelectRows {
        on: Var,
        off: Var,
        mask: Vec<bool>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        lengths: Vec<usize>,
    },
    MulConst {
        x: Var,
        factor: Vec<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    MaskedSoftmax {
        x: Var,
        lengths: Vec<usize>,
    },
    WeightedSumTime {
        h: Var,
        w: Var,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Softmax(..) => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Reshape(..) => "reshape",
            Op::Gather { .. } => "gather",
            Op::Im2Col { .. } => "im2col",
            Op::MaskTime { .. } => "mask_time",
            Op::SliceTime { .. } => "slice_time",
            Op::StackTime(..) => "stack_time",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::SelectRows { .. } => "select_rows",
            Op::MaxPool { .. } => "global_max_pool",
            Op::AvgPool { .. } => "global_avg_pool",
            Op::MulConst { .. } => "mul_const",
            Op::BatchNorm { .. } => "batch_norm",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::WeightedSumTime { .. } => "weighted_sum_time",
        }
    }
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// A differentiation tape. Confined to one thread; build a fresh one per step.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_lengths(lengths: &[usize], batch: usize, steps: usize) -> Result<()> {
    if lengths.len() != batch {
        return Err(Error::Mask(format!(
            "{} lengths for a batch of {batch}",
            lengths.len()
        )));
    }
    if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > steps) {
        return Err(Error::Mask(format!(
            "length {bad} outside [1, {steps}]"
        )));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    /// Leaf sharing storage with a parameter store; no copy is made.
    pub fn leaf_shared(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(op, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |p, q| p + q)?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |p, q| p - q)?;
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |p, q| p * q)?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// `x[..., H] + b[H]`, broadcasting the bias over leading axes.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let h = xv.last_dim();
        if bv.len() != h {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = (*self.nodes[x.0].value).clone();
        for row in out.data_mut().chunks_mut(h) {
            for (o, &bias) in row.iter_mut().zip(bv.data()) {
                *o += bias;
            }
        }
        self.push(out, Op::AddBias(x, b), &[x, b])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = T::from_usize(v.len()).unwrap();
        let s: T = v.data().iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh(x), &[x])
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if c < 2 {
            return Err(Error::InvalidArgument(format!(
                "softmax needs at least 2 classes, got {c}"
            )));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Mean over the batch of `-ln max(p[i, label_i], 1e-9)`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let pv = self.value(probs);
        if pv.ndim() != 2 || pv.shape()[0] != labels.len() {
            return Err(Error::shape("cross_entropy", pv.shape(), &[labels.len()]));
        }
        let c = pv.shape()[1];
        let floor = T::from_f64_lossy(CE_FLOOR);
        let mut total = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::LabelOutOfRange {
                    label: y,
                    classes: c,
                });
            }
            total -= pv.at2(i, y).max(floor).ln();
        }
        let out = total / T::from_usize(labels.len().max(1)).unwrap();
        self.push(
            Tensor::scalar(out),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            &[probs],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = (*self.nodes[x.0].value).clone().reshape(shape)?;
        self.push(out, Op::Reshape(x), &[x])
    }

    /// Row lookup: `out[i] = table[indices[i]]`, shape `[n, d]`.
    ///
    /// Gradient never flows into `frozen_row` (the padding row).
    pub fn gather(&mut self, table: Var, indices: &[usize], frozen_row: Option<usize>) -> Result<Var> {
        let tv = self.value(table);
        if tv.ndim() != 2 {
            return Err(Error::shape("gather", tv.shape(), &[indices.len()]));
        }
        let (v, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= v {
                return Err(Error::TokenOutOfRange { index: i, vocab: v });
            }
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::new(&[indices.len(), d], data)?;
        self.push(
            out,
            Op::Gather {
                table,
                indices: indices.to_vec(),
                frozen_row,
            },
            &[table],
        )
    }

    /// Unfolds `x[B, L, D]` into sliding windows `[B*L, k*D]` for a stride-1
    /// "same" convolution. The window at `t` covers `t-left .. t-left+k`;
    /// positions before 0 or at/after each sequence's length read as zero.
    pub fn im2col(&mut self, x: Var, k: usize, lengths: Option<&[usize]>) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 3 || k == 0 {
            return Err(Error::shape("im2col", xv.shape(), &[k]));
        }
        let (b, l, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let lengths = match lengths {
            Some(ls) => {
                check_lengths(ls, b, l)?;
                ls.to_vec()
            }
            None => vec![l; b],
        };
        let left = (k - 1) / 2;
        let mut out = Tensor::zeros(&[b * l, k * d]);
        let src = xv.data();
        let dst = out.data_mut();
        for bi in 0..b {
            for t in 0..l {
                let row = (bi * l + t) * k * d;
                for j in 0..k {
                    let s = t as isize - left as isize + j as isize;
                    if s < 0 || s as usize >= lengths[bi] {
                        continue;
                    }
                    let from = (bi * l + s as usize) * d;
                    dst[row + j * d..row + (j + 1) * d].copy_from_slice(&src[from..from + d]);
                }
            }
        }
        self.push(out, Op::Im2Col { x, k, left, lengths }, &[x])
    }

    /// Zeroes time steps at or beyond each sequence's length in `x[B, L, F]`.
    pub fn mask_time(&mut self, x: Var, lengths: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 3 {
            return Err(Error::shape("mask_time", xv.shape(), &[lengths.len()]));
        }
        let (b, l, f) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        check_lengths(lengths, b, l)?;
        let mut out = xv.clone();
        for (bi, &len) in lengths.iter().enumerate() {
            out.data_mut()[(bi * l + len) * f..(bi + 1) * l * f].fill(T::zero());
        }
        self.push(
            out,
            Op::MaskTime {
                x,
                lengths: lengths.to_vec(),
            },
            &[x],
        )
    }

    /// `x[B, L, G] -> x[:, t, :]` of shape `[B, G]`.
    pub fn slice_time(&mut self, x: Var, t: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 3 || t >= xv.shape()[1] {
            return Err(Error::shape("slice_time", xv.shape(), &[t]));
        }
        let (b, l, g) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut data = Vec::with_capacity(b * g);
        for bi in 0..b {
            let from = (bi * l + t) * g;
            data.extend_from_slice(&xv.data()[from..from + g]);
        }
        self.push(Tensor::new(&[b, g], data)?, Op::SliceTime { x, t }, &[x])
    }

    /// Stacks `L` tensors of shape `[B, U]` into `[B, L, U]`.
    pub fn stack_time(&mut self, steps: &[Var]) -> Result<Var> {
        let first = self
            .value(*steps.first().ok_or_else(|| Error::Empty("stack_time".into()))?)
            .shape()
            .to_vec();
        if first.len() != 2 {
            return Err(Error::shape("stack_time", &first, &[steps.len()]));
        }
        let (b, u, l) = (first[0], first[1], steps.len());
        let mut out = Tensor::zeros(&[b, l, u]);
        for (t, &s) in steps.iter().enumerate() {
            let sv = self.value(s);
            if sv.shape() != first.as_slice() {
                return Err(Error::shape("stack_time", &first, sv.shape()));
            }
            for bi in 0..b {
                let to = (bi * l + t) * u;
                out.data_mut()[to..to + u].copy_from_slice(sv.row(bi));
            }
        }
        self.push(out, Op::StackTime(steps.to_vec()), steps)
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 || start >= end || end > xv.shape()[1] {
            return Err(Error::shape("slice_cols", xv.shape(), &[start, end]));
        }
        let r = xv.shape()[0];
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&xv.row(i)[start..end]);
        }
        self.push(Tensor::new(&[r, end - start], data)?, Op::SliceCols { x, start }, &[x])
    }

    /// Concatenates 2-D tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self
            .value(*parts.first().ok_or_else(|| Error::Empty("concat_cols".into()))?)
            .shape()[0];
        let mut width = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.ndim() != 2 || pv.shape()[0] != rows {
                return Err(Error::shape("concat_cols", &[rows], pv.shape()));
            }
            width += pv.shape()[1];
        }
        let mut data = Vec::with_capacity(rows * width);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(Tensor::new(&[rows, width], data)?, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Row-wise choice: row `i` comes from `on` when `mask[i]`, else from `off`.
    pub fn select_rows(&mut self, on: Var, off: Var, mask: &[bool]) -> Result<Var> {
        let (a, b) = (self.value(on), self.value(off));
        if a.shape() != b.shape() || a.ndim() != 2 || a.shape()[0] != mask.len() {
            return Err(Error::shape("select_rows", a.shape(), b.shape()));
        }
        let mut out = b.clone();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(i).copy_from_slice(a.row(i));
            }
        }
        self.push(
            out,
            Op::SelectRows {
                on,
                off,
                mask: mask.to_vec(),
            },
            &[on, off],
        )
    }

    /// Per-feature max over the first `lengths[b]` steps of `x[B, L, F]`.
    /// Ties resolve to the earliest step.
    pub fn global_max_pool(&mut self, x: Var, lengths: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 3 {
            return Err(Error::shape("global_max_pool", xv.shape(), &[lengths.len()]));
        }
        let (b, l, f) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        check_lengths(lengths, b, l)?;
        let src = xv.data();
        let mut out = Vec::with_capacity(b * f);
        let mut argmax = Vec::with_capacity(b * f);
        for bi in 0..b {
            for fi in 0..f {
                let mut best = src[bi * l * f + fi];
                let mut at = 0;
                for t in 1..lengths[bi] {
                    let v = src[(bi * l + t) * f + fi];
                    if v > best {
                        best = v;
                        at = t;
                    }
                }
                out.push(best);
                argmax.push(at);
            }
        }
        self.push(Tensor::new(&[b, f], out)?, Op::MaxPool { x, argmax }, &[x])
    }

    /// Per-feature mean over the first `lengths[b]` steps of `x[B, L, F]`.
    pub fn global_avg_pool(&mut self, x: Var, lengths: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 3 {
            return Err(Error::shape("global_avg_pool", xv.shape(), &[lengths.len()]));
        }
        let (b, l, f) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        check_lengths(lengths, b, l)?;
        let src = xv.data();
        let mut out = vec![T::zero(); b * f];
        for bi in 0..b {
            let acc = &mut out[bi * f..(bi + 1) * f];
            for t in 0..lengths[bi] {
                for (a, &v) in acc.iter_mut().zip(&src[(bi * l + t) * f..(bi * l + t + 1) * f]) {
                    *a += v;
                }
            }
            let n = T::from_usize(lengths[bi]).unwrap();
            acc.iter_mut().for_each(|a| *a /= n);
        }
        self.push(
            Tensor::new(&[b, f], out)?,
            Op::AvgPool {
                x,
                lengths: lengths.to_vec(),
            },
            &[x],
        )
    }

    /// Elementwise product with a constant (e.g. a dropout keep mask).
    pub fn mul_const(&mut self, x: Var, factor: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if factor.len() != xv.len() {
            return Err(Error::shape("mul_const", xv.shape(), &[factor.len()]));
        }
        let data = xv.data().iter().zip(&factor).map(|(&a, &b)| a * b).collect();
        let out = Tensor::new(xv.shape(), data)?;
        self.push(out, Op::MulConst { x, factor }, &[x])
    }

    /// Batch normalization of `x[B, F]`.
    ///
    /// With `stats = None` the batch mean and (biased) variance are used and
    /// returned; with `Some((mean, var))` those fixed statistics are used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        stats: Option<(&[T], &[T])>,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let xv = self.value(x);
        if xv.ndim() != 2 {
            return Err(Error::shape("batch_norm", xv.shape(), self.value(gamma).shape()));
        }
        let (b, f) = (xv.shape()[0], xv.shape()[1]);
        if self.value(gamma).len() != f || self.value(beta).len() != f {
            return Err(Error::shape("batch_norm", xv.shape(), self.value(gamma).shape()));
        }
        let (mean, var) = match stats {
            Some((m, v)) => (m.to_vec(), v.to_vec()),
            None => {
                if b < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "batch normalization in training mode needs a batch of at least 2, got {b}"
                    )));
                }
                let n = T::from_usize(b).unwrap();
                let mut mean = vec![T::zero(); f];
                for i in 0..b {
                    for (m, &v) in mean.iter_mut().zip(xv.row(i)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![T::zero(); f];
                for i in 0..b {
                    for ((s, &v), &m) in var.iter_mut().zip(xv.row(i)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n);
                (mean, var)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); b * f];
        let mut out = vec![T::zero(); b * f];
        let (g, be) = (self.value(gamma).data(), self.value(beta).data());
        for i in 0..b {
            for j in 0..f {
                let h = (xv.data()[i * f + j] - mean[j]) * inv_std[j];
                xhat[i * f + j] = h;
                out[i * f + j] = g[j] * h + be[j];
            }
        }
        let out = Tensor::new(&[b, f], out)?;
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: stats.is_none(),
            },
            &[x, gamma, beta],
        )?;
        Ok((v, mean, var))
    }

    /// Softmax over the first `lengths[b]` entries of each row of `x[B, L]`;
    /// remaining entries are exactly zero.
    pub fn masked_softmax(&mut self, x: Var, lengths: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 {
            return Err(Error::shape("masked_softmax", xv.shape(), &[lengths.len()]));
        }
        let (b, l) = (xv.shape()[0], xv.shape()[1]);
        check_lengths(lengths, b, l)?;
        let mut out = Tensor::zeros(&[b, l]);
        for (i, &len) in lengths.iter().enumerate() {
            let row = &mut out.row_mut(i)[..len];
            row.copy_from_slice(&xv.row(i)[..len]);
            softmax_in_place(row);
        }
        self.push(
            out,
            Op::MaskedSoftmax {
                x,
                lengths: lengths.to_vec(),
            },
            &[x],
        )
    }

    /// `out[b, u] = sum_t w[b, t] * h[b, t, u]`.
    pub fn weighted_sum_time(&mut self, h: Var, w: Var) -> Result<Var> {
        let (hv, wv) = (self.value(h), self.value(w));
        if hv.ndim() != 3 || wv.ndim() != 2 || hv.shape()[..2] != wv.shape()[..] {
            return Err(Error::shape("weighted_sum_time", hv.shape(), wv.shape()));
        }
        let (b, l, u) = (hv.shape()[0], hv.shape()[1], hv.shape()[2]);
        let mut out = vec![T::zero(); b * u];
        for bi in 0..b {
            for t in 0..l {
                let wt = wv.data()[bi * l + t];
                if wt == T::zero() {
                    continue;
                }
                let src = &hv.data()[(bi * l + t) * u..(bi * l + t + 1) * u];
                for (o, &s) in out[bi * u..(bi + 1) * u].iter_mut().zip(src) {
                    *o += wt * s;
                }
            }
        }
        self.push(Tensor::new(&[b, u], out)?, Op::WeightedSumTime { h, w }, &[h, w])
    }

    /// Populates gradients of the scalar `loss` for every node that requires
    /// one. Contributions from multiple consumers are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let seed = Tensor::full(lv.shape(), T::one());
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(seed);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let nodes = &self.nodes;
        let y = &nodes[i].value;
        let val = |v: Var| -> &Tensor<T> { &nodes[v.0].value };
        let wants = |v: Var| nodes[v.0].requires_grad;
        // Accumulator for input `v`, zero-initialized on first touch.
        fn slot<'a, T: Scalar>(
            grads: &'a mut [Option<Tensor<T>>],
            nodes: &[Node<T>],
            v: Var,
        ) -> &'a mut Tensor<T> {
            grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()))
        }
        let add_to = |grads: &mut [Option<Tensor<T>>], v: Var, f: &dyn Fn(usize) -> T| {
            if wants(v) {
                let s = slot(grads, nodes, v);
                for (j, a) in s.data_mut().iter_mut().enumerate() {
                    *a += f(j);
                }
            }
        };
        let gd = g.data();

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if wants(*a) {
                    let s = slot(grads, nodes, *a);
                    T::gemm(m, n, k, gd, false, bv.data(), true, s.data_mut(), T::one());
                }
                if wants(*b) {
                    let s = slot(grads, nodes, *b);
                    T::gemm(k, m, n, av.data(), true, gd, false, s.data_mut(), T::one());
                }
            }
            Op::Add(a, b) => {
                add_to(grads, *a, &|j| gd[j]);
                add_to(grads, *b, &|j| gd[j]);
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, &|j| gd[j]);
                add_to(grads, *b, &|j| -gd[j]);
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                add_to(grads, *a, &|j| gd[j] * bd[j]);
                add_to(grads, *b, &|j| gd[j] * ad[j]);
            }
            Op::AddBias(x, b) => {
                add_to(grads, *x, &|j| gd[j]);
                if wants(*b) {
                    let s = slot(grads, nodes, *b);
                    let h = s.len();
                    for row in gd.chunks(h) {
                        for (a, &v) in s.data_mut().iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                }
            }
            Op::Scale(x, s) => add_to(grads, *x, &|j| gd[j] * *s),
            Op::Sum(x) => add_to(grads, *x, &|_| gd[0]),
            Op::Mean(x) => {
                let n = T::from_usize(val(*x).len()).unwrap();
                add_to(grads, *x, &|_| gd[0] / n);
            }
            Op::Relu(x) => {
                let yd = y.data();
                add_to(grads, *x, &|j| if yd[j] > T::zero() { gd[j] } else { T::zero() });
            }
            Op::Sigmoid(x) => {
                let yd = y.data();
                add_to(grads, *x, &|j| gd[j] * yd[j] * (T::one() - yd[j]));
            }
            Op::Tanh(x) => {
                let yd = y.data();
                add_to(grads, *x, &|j| gd[j] * (T::one() - yd[j] * yd[j]));
            }
            Op::Softmax(x) => {
                if wants(*x) {
                    let c = y.last_dim();
                    let s = slot(grads, nodes, *x);
                    for ((srow, yrow), grow) in s
                        .data_mut()
                        .chunks_mut(c)
                        .zip(y.data().chunks(c))
                        .zip(gd.chunks(c))
                    {
                        let dot: T = yrow.iter().zip(grow).map(|(&p, &q)| p * q).sum();
                        for ((a, &p), &q) in srow.iter_mut().zip(yrow).zip(grow) {
                            *a += p * (q - dot);
                        }
                    }
                }
            }
            Op::CrossEntropy { probs, labels } => {
                if wants(*probs) {
                    let pv = val(*probs);
                    let c = pv.shape()[1];
                    let floor = T::from_f64_lossy(CE_FLOOR);
                    let n = T::from_usize(labels.len()).unwrap();
                    let s = slot(grads, nodes, *probs);
                    for (r, &lab) in labels.iter().enumerate() {
                        let p = pv.data()[r * c + lab];
                        if p > floor {
                            s.data_mut()[r * c + lab] -= gd[0] / (n * p);
                        }
                    }
                }
            }
            Op::Reshape(x) => add_to(grads, *x, &|j| gd[j]),
            Op::Gather {
                table,
                indices,
                frozen_row,
            } => {
                if wants(*table) {
                    let s = slot(grads, nodes, *table);
                    let d = s.last_dim();
                    for (r, &idx) in indices.iter().enumerate() {
                        if Some(idx) == *frozen_row {
                            continue;
                        }
                        for (a, &v) in s.row_mut(idx).iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                            *a += v;
                        }
                    }
                }
            }
            Op::Im2Col {
                x,
                k,
                left,
                lengths,
            } => {
                if wants(*x) {
                    let s = slot(grads, nodes, *x);
                    let (b, l, d) = (s.shape()[0], s.shape()[1], s.shape()[2]);
                    let dst = s.data_mut();
                    for bi in 0..b {
                        for t in 0..l {
                            let row = (bi * l + t) * k * d;
                            for j in 0..*k {
                                let src = t as isize - *left as isize + j as isize;
                                if src < 0 || src as usize >= lengths[bi] {
                                    continue;
                                }
                                let to = (bi * l + src as usize) * d;
                                for c in 0..d {
                                    dst[to + c] += gd[row + j * d + c];
                                }
                            }
                        }
                    }
                }
            }
            Op::MaskTime { x, lengths } => {
                if wants(*x) {
                    let s = slot(grads, nodes, *x);
                    let (l, f) = (s.shape()[1], s.shape()[2]);
                    for (bi, &len) in lengths.iter().enumerate() {
                        let range = bi * l * f..(bi * l + len) * f;
                        for (a, &v) in s.data_mut()[range.clone()].iter_mut().zip(&gd[range]) {
                            *a += v;
                        }
                    }
                }
            }
            Op::SliceTime { x, t } => {
                if wants(*x) {
                    let s = slot(grads, nodes, *x);
                    let (l, w) = (s.shape()[1], s.shape()[2]);
                    for (bi, grow) in gd.chunks(w).enumerate() {
                        let to = (bi * l + t) * w;
                        for (a, &v) in s.data_mut()[to..to + w].iter_mut().zip(grow) {
                            *a += v;
                        }
                    }
                }
            }
            Op::StackTime(steps) => {
                let (b, l, u) = (y.shape()[0], y.shape()[1], y.shape()[2]);
                for (t, &step) in steps.iter().enumerate() {
                    if wants(step) {
                        let s = slot(grads, nodes, step);
                        for bi in 0..b {
                            let from = (bi * l + t) * u;
                            for (a, &v) in s.row_mut(bi).iter_mut().zip(&gd[from..from + u]) {
                                *a += v;
                            }
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if wants(*x) {
                    let w = y.last_dim();
                    let s = slot(grads, nodes, *x);
                    for (r, grow) in gd.chunks(w).enumerate() {
                        for (a, &v) in s.row_mut(r)[*start..*start + w].iter_mut().zip(grow) {
                            *a += v;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let width = y.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).last_dim();
                    if wants(p) {
                        let s = slot(grads, nodes, p);
                        for (r, grow) in gd.chunks(width).enumerate() {
                            for (a, &v) in s.row_mut(r).iter_mut().zip(&grow[offset..offset + w]) {
                                *a += v;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SelectRows { on, off, mask } => {
                let w = y.last_dim();
                for (target, pick) in [(*on, true), (*off, false)] {
                    if wants(target) {
                        let s = slot(grads, nodes, target);
                        for (r, &m) in mask.iter().enumerate() {
                            if m == pick {
                                for (a, &v) in s.row_mut(r).iter_mut().zip(&gd[r * w..(r + 1) * w]) {
                                    *a += v;
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if wants(*x) {
                    let s = slot(grads, nodes, *x);
                    let (l, f) = (s.shape()[1], s.shape()[2]);
                    for (idx, &t) in argmax.iter().enumerate() {
                        let (bi, fi) = (idx / f, idx % f);
                        s.data_mut()[(bi * l + t) * f + fi] += gd[idx];
                    }
                }
            }
            Op::AvgPool { x, lengths } => {
                if wants(*x) {
                    let s = slot(grads, nodes, *x);
                    let (l, f) = (s.shape()[1], s.shape()[2]);
                    for (bi, &len) in lengths.iter().enumerate() {
                        let n = T::from_usize(len).unwrap();
                        for t in 0..len {
                            let to = (bi * l + t) * f;
                            for (a, &v) in s.data_mut()[to..to + f].iter_mut().zip(&gd[bi * f..(bi + 1) * f]) {
                                *a += v / n;
                            }
                        }
                    }
                }
            }
            Op::MulConst { x, factor } => add_to(grads, *x, &|j| gd[j] * factor[j]),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (b, f) = (y.shape()[0], y.shape()[1]);
                let gam = val(*gamma).data();
                let mut sum_g = vec![T::zero(); f];
                let mut sum_gx = vec![T::zero(); f];
                for r in 0..b {
                    for j in 0..f {
                        sum_g[j] += gd[r * f + j];
                        sum_gx[j] += gd[r * f + j] * xhat[r * f + j];
                    }
                }
                if wants(*x) {
                    let s = slot(grads, nodes, *x);
                    let n = T::from_usize(b).unwrap();
                    for r in 0..b {
                        for j in 0..f {
                            let dh = gd[r * f + j] * gam[j];
                            s.data_mut()[r * f + j] += if *batch_stats {
                                inv_std[j] / n
                                    * (n * dh - gam[j] * sum_g[j] - xhat[r * f + j] * gam[j] * sum_gx[j])
                            } else {
                                dh * inv_std[j]
                            };
                        }
                    }
                }
                add_to(grads, *gamma, &|j| sum_gx[j]);
                add_to(grads, *beta, &|j| sum_g[j]);
            }
            Op::MaskedSoftmax { x, lengths } => {
                if wants(*x) {
                    let l = y.last_dim();
                    let s = slot(grads, nodes, *x);
                    for (r, &len) in lengths.iter().enumerate() {
                        let yrow = &y.row(r)[..len];
                        let grow = &gd[r * l..r * l + len];
                        let dot: T = yrow.iter().zip(grow).map(|(&p, &q)| p * q).sum();
                        for ((a, &p), &q) in s.row_mut(r)[..len].iter_mut().zip(yrow).zip(grow) {
                            *a += p * (q - dot);
                        }
                    }
                }
            }
            Op::WeightedSumTime { h, w } => {
                let (hv, wv) = (val(*h), val(*w));
                let (b, l, u) = (hv.shape()[0], hv.shape()[1], hv.shape()[2]);
                if wants(*h) {
                    let s = slot(grads, nodes, *h);
                    for bi in 0..b {
                        for t in 0..l {
                            let wt = wv.data()[bi * l + t];
                            let to = (bi * l + t) * u;
                            for (a, &v) in s.data_mut()[to..to + u].iter_mut().zip(&gd[bi * u..(bi + 1) * u]) {
                                *a += wt * v;
                            }
                        }
                    }
                }
                if wants(*w) {
                    let s = slot(grads, nodes, *w);
                    for bi in 0..b {
                        for t in 0..l {
                            let src = &hv.data()[(bi * l + t) * u..(bi * l + t + 1) * u];
                            let dot: T = src.iter().zip(&gd[bi * u..(bi + 1) * u]).map(|(&p, &q)| p * q).sum();
                            s.data_mut()[bi * l + t] += dot;
                        }
                    }
                }
            }
        }
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
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
