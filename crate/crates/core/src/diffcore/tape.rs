//! Reverse-mode differentiation over a linear trace of tensor operations.
//!
//! A [`Tape`] records every forward operation in execution order, which is
//! already a topological order. [`Tape::backward`] walks it once in reverse,
//! so each recorded node is visited exactly once and gradient contributions
//! from multiple uses accumulate additively.

use super::kernels::{self, ConvDims};
use super::tensor::{strides, Tensor};
use super::TensorError;

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Boolean keep-mask for [`Tape::softmax`]; its shape must be a suffix of the
/// logits shape and is repeated over the leading axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    shape: Vec<usize>,
    keep: Vec<bool>,
}

impl Mask {
    pub fn new(shape: Vec<usize>, keep: Vec<bool>) -> Result<Self> {
        if shape.iter().product::<usize>() != keep.len() {
            return Err(TensorError::Invalid {
                op: "mask",
                msg: format!("shape {shape:?} does not match {} entries", keep.len()),
            });
        }
        Ok(Self { shape, keep })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }
}

/// Batch statistics produced by a training-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance per channel.
    pub var: Vec<f64>,
    /// Number of rows the statistics were computed over.
    pub count: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, shared: bool },
    Conv1d { input: Var, kernel: Var, dims: ConvDims },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: f64 },
    Sigmoid { a: Var },
    LeakyRelu { a: Var, slope: f64 },
    Relu { a: Var },
    MaxWith { a: Var, floor: Var },
    Softmax { a: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, normalized: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Sum { a: Var },
    Mean { a: Var },
    SumAxis { a: Var, axis: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { a: Var, axis: usize, start: usize },
    Permute { a: Var, axes: Vec<usize> },
    Reshape { a: Var },
    PairwiseSum { a: Var, b: Var },
    SmoothL1 { a: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. One tape per forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` if `v` does not
    /// require gradients or does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Like [`get`](Self::get) but returns zeros of the right shape for
    /// unreached variables.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

fn is_suffix(full: &[usize], suffix: &[usize]) -> bool {
    suffix.len() <= full.len() && full[full.len() - suffix.len()..] == *suffix
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid { op, msg: msg.into() }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(invalid(op, format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok(())
}

/// Sums a full-shape gradient down to a suffix-broadcast operand.
fn reduce_to_suffix(g: &[f64], suffix_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; suffix_len];
    for chunk in g.chunks(suffix_len) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gathers `data` (shaped `shape`) into the layout given by `axes`.
fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(data[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
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

    /// Matrix product over the last two axes.
    ///
    /// `a` is `[..., m, k]`. `b` is either a shared `[k, n]` matrix applied to
    /// every leading index of `a`, or `[..., k, n]` with the same leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let lead = &sa[..sa.len() - 2];
        let shared = sb.len() == 2;
        if kb != k || (!shared && sb[..sb.len() - 2] != *lead) {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let batch: usize = lead.iter().product();
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), batch, m, k, n, shared);
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::MatMul { a, b, batch, m, k, n, shared }, &[a, b]))
    }

    /// Length-preserving 1-D convolution along the second-to-last axis.
    ///
    /// `input` is `[..., len, cin]`, `kernel` is `[k, cin, cout]` with odd `k`.
    pub fn conv1d_same(&mut self, input: Var, kernel: Var) -> Result<Var> {
        let sx = self.shape(input).to_vec();
        let sw = self.shape(kernel).to_vec();
        if sx.len() < 2 || sw.len() != 3 || sw[1] != sx[sx.len() - 1] {
            return Err(mismatch("conv1d_same", &sx, &sw));
        }
        if sw[0].is_multiple_of(2) {
            return Err(invalid("conv1d_same", format!("kernel size {} must be odd", sw[0])));
        }
        let len = sx[sx.len() - 2];
        let dims = ConvDims {
            series: sx[..sx.len() - 2].iter().product(),
            len,
            cin: sw[1],
            cout: sw[2],
            ksize: sw[0],
        };
        let data = kernels::conv1d_same(self.value(input).data(), self.value(kernel).data(), dims);
        let mut shape = sx[..sx.len() - 1].to_vec();
        shape.push(dims.cout);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Conv1d { input, kernel, dims }, &[input, kernel]))
    }

    fn binary_suffix(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if !is_suffix(sa, sb) {
            return Err(mismatch(op, sa, sb));
        }
        let bd = self.value(b).data();
        let ad = self.value(a).data();
        let blen = bd.len().max(1);
        let data = ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % blen])).collect();
        Tensor::new(sa.to_vec(), data)
    }

    /// `a + b`, where `b`'s shape is a suffix of `a`'s (broadcast over the
    /// leading axes).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary_suffix("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    /// `a - b` with the same broadcasting rule as [`add`](Self::add).
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary_suffix("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub { a, b }, &[a, b]))
    }

    /// Elementwise (Hadamard) product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("mul", self.shape(a), self.shape(b)));
        }
        let value = self.binary_suffix("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    /// Elementwise `max(a, floor)`, `floor` suffix-broadcast.
    pub fn max_with(&mut self, a: Var, floor: Var) -> Result<Var> {
        let value = self.binary_suffix("max_with", a, floor, f64::max)?;
        Ok(self.push(value, Op::MaxWith { a, floor }, &[a, floor]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("same shape")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.unary(a, |x| x * factor);
        self.push(value, Op::Scale { a, factor }, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.unary(a, sigmoid);
        self.push(value, Op::Sigmoid { a }, &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.unary(a, |x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu { a, slope }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.unary(a, |x| x.max(0.0));
        self.push(value, Op::Relu { a }, &[a])
    }

    /// Elementwise Smooth-L1: `0.5x²` if `|x| < 1`, else `|x| - 0.5`.
    pub fn smooth_l1(&mut self, a: Var) -> Var {
        let value = self.unary(a, |x| if x.abs() < 1.0 { 0.5 * x * x } else { x.abs() - 0.5 });
        self.push(value, Op::SmoothL1 { a }, &[a])
    }

    /// Softmax over the last axis. Entries where `mask` is false get
    /// probability exactly 0.
    pub fn softmax(&mut self, a: Var, mask: Option<&Mask>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let Some(&n) = shape.last() else {
            return Err(invalid("softmax", "scalar input"));
        };
        if let Some(m) = mask {
            if !is_suffix(&shape, m.shape()) || m.shape().is_empty() {
                return Err(mismatch("softmax", &shape, m.shape()));
            }
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for (r, (src, dst)) in x.chunks(n).zip(out.chunks_mut(n)).enumerate() {
            let keep = |j: usize| match mask {
                Some(m) => m.keep[(r * n + j) % m.keep.len()],
                None => true,
            };
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in src.iter().enumerate() {
                if keep(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(invalid("softmax", format!("row {r} has no unmasked entries")));
            }
            let mut total = 0.0;
            for (j, (&v, d)) in src.iter().zip(dst.iter_mut()).enumerate() {
                if keep(j) {
                    *d = (v - max).exp();
                    total += *d;
                }
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Softmax { a }, &[a]))
    }

    fn batchnorm_inner(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
        train: bool,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let c = *sx.last().ok_or_else(|| invalid("batchnorm", "scalar input"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(mismatch("batchnorm", &sx, self.shape(gamma)));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let xd = self.value(x).data();
        let mut normalized = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for (i, &v) in xd.iter().enumerate() {
            let ch = i % c;
            let h = (v - mean[ch]) * inv_std[ch];
            normalized[i] = h;
            out[i] = g[ch] * h + b[ch];
        }
        let value = Tensor::new(sx, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm { x, gamma, beta, normalized, inv_std, train },
            &[x, gamma, beta],
        ))
    }

    /// Training-mode batch normalization over every axis except the last
    /// (channel) axis. Returns the output and the batch statistics used.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let sx = self.shape(x).to_vec();
        let c = *sx.last().ok_or_else(|| invalid("batchnorm", "scalar input"))?;
        let xd = self.value(x).data();
        let rows = xd.len() / c.max(1);
        if rows == 0 {
            return Err(invalid("batchnorm", "empty batch"));
        }
        let mut mean = vec![0.0; c];
        for row in xd.chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; c];
        for row in xd.chunks(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= rows as f64);
        let out = self.batchnorm_inner(x, gamma, beta, &mean, &var, eps, true)?;
        Ok((out, BatchStats { mean, var, count: rows }))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batchnorm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        let c = self.shape(gamma).first().copied().unwrap_or(0);
        if mean.len() != c || var.len() != c {
            return Err(invalid("batchnorm", "running statistics do not match channel count"));
        }
        self.batchnorm_inner(x, gamma, beta, mean, var, eps, false)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean { a }, &[a])
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("sum_axis", &shape, axis)?;
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x[(o * len + l) * inner..][..inner];
                for (d, v) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        let mut new_shape = shape.clone();
        new_shape.remove(axis);
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push(value, Op::SumAxis { a, axis }, &[a]))
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(a)
            .get(axis)
            .ok_or_else(|| invalid("mean_axis", format!("axis {axis} out of range")))?;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / len as f64))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| invalid("concat", "no inputs"))?)
            .to_vec();
        check_axis("concat", &first, axis)?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[..axis] != first[..axis] || s[axis + 1..] != first[axis + 1..] {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let block = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * block..][..block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("narrow", &shape, axis)?;
        if start + len > shape[axis] {
            return Err(invalid("narrow", format!("range {start}..{} exceeds axis length {}", start + len, shape[axis])));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x[(o * shape[axis] + start) * inner..][..len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push(value, Op::Narrow { a, axis, start }, &[a]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&x| x >= shape.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(invalid("permute", format!("{axes:?} is not a permutation of {} axes", shape.len())));
        }
        let (out_shape, data) = permute_data(self.value(a).data(), &shape, axes);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Permute { a, axes: axes.to_vec() }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(mismatch("reshape", t.shape(), shape));
        }
        let value = Tensor::new(shape.to_vec(), t.data().to_vec())?;
        Ok(self.push(value, Op::Reshape { a }, &[a]))
    }

    /// `out[..., i, j] = a[..., i] + b[..., j]` for equally shaped `a`, `b`.
    pub fn pairwise_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.is_empty() || sa != self.shape(b) {
            return Err(mismatch("pairwise_sum", &sa, self.shape(b)));
        }
        let n = *sa.last().unwrap();
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = Vec::with_capacity(ad.len() * n);
        for (ra, rb) in ad.chunks(n).zip(bd.chunks(n)) {
            for &x in ra {
                out.extend(rb.iter().map(|&y| x + y));
            }
        }
        let mut shape = sa;
        shape.push(n);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::PairwiseSum { a, b }, &[a, b]))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.value(loss);
        if ls.len() != 1 {
            return Err(TensorError::NonScalarLoss(ls.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match (g, &n.op) {
                (Some(g), Op::Leaf) if n.requires_grad => {
                    Some(Tensor::new(n.value.shape().to_vec(), g).expect("gradient shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = node.value.data();

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, batch, m, k, n, shared } => {
                if self.nodes[a.0].requires_grad {
                    acc(a, kernels::matmul_nt(g, val(b), batch, m, n, k, shared));
                }
                if self.nodes[b.0].requires_grad {
                    let gb = if shared {
                        kernels::matmul_tn(val(a), g, 1, batch * m, k, n)
                    } else {
                        kernels::matmul_tn(val(a), g, batch, m, k, n)
                    };
                    acc(b, gb);
                }
            }
            &Op::Conv1d { input, kernel, dims } => {
                if self.nodes[input.0].requires_grad {
                    acc(input, kernels::conv1d_grad_input(g, val(kernel), dims));
                }
                if self.nodes[kernel.0].requires_grad {
                    acc(kernel, kernels::conv1d_grad_kernel(val(input), g, dims));
                }
            }
            &Op::Add { a, b } => {
                acc(a, g.to_vec());
                if self.nodes[b.0].requires_grad {
                    acc(b, reduce_to_suffix(g, val(b).len()));
                }
            }
            &Op::Sub { a, b } => {
                acc(a, g.to_vec());
                if self.nodes[b.0].requires_grad {
                    acc(b, reduce_to_suffix(g, val(b).len()).into_iter().map(|x| -x).collect());
                }
            }
            &Op::Mul { a, b } => {
                let (av, bv) = (val(a), val(b));
                acc(a, g.iter().zip(bv).map(|(g, y)| g * y).collect());
                acc(b, g.iter().zip(av).map(|(g, x)| g * x).collect());
            }
            &Op::MaxWith { a, floor } => {
                let (av, fv) = (val(a), val(floor));
                let flen = fv.len();
                let ga = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| if av[i] > fv[i % flen] { gi } else { 0.0 })
                    .collect();
                acc(a, ga);
                if self.nodes[floor.0].requires_grad {
                    let gf: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| if av[i] > fv[i % flen] { 0.0 } else { gi })
                        .collect();
                    acc(floor, reduce_to_suffix(&gf, flen));
                }
            }
            &Op::Scale { a, factor } => acc(a, g.iter().map(|x| x * factor).collect()),
            &Op::Sigmoid { a } => acc(a, g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)).collect()),
            &Op::LeakyRelu { a, slope } => {
                acc(a, g.iter().zip(val(a)).map(|(g, &x)| if x > 0.0 { *g } else { slope * g }).collect())
            }
            &Op::Relu { a } => acc(a, g.iter().zip(val(a)).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect()),
            &Op::SmoothL1 { a } => acc(
                a,
                g.iter()
                    .zip(val(a))
                    .map(|(g, &x)| if x.abs() < 1.0 { g * x } else { g * x.signum() })
                    .collect(),
            ),
            &Op::Softmax { a } => {
                let n = *node.value.shape().last().unwrap();
                let mut ga = vec![0.0; g.len()];
                for ((gr, yr), dr) in g.chunks(n).zip(out.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = yi * (gi - dot);
                    }
                }
                acc(a, ga);
            }
            Op::BatchNorm { x, gamma, beta, normalized, inv_std, train } => {
                let c = inv_std.len();
                let rows = (g.len() / c) as f64;
                let gam = val(*gamma);
                let mut sum_g = vec![0.0; c];
                let mut sum_gh = vec![0.0; c];
                for (i, &gi) in g.iter().enumerate() {
                    sum_g[i % c] += gi;
                    sum_gh[i % c] += gi * normalized[i];
                }
                if self.nodes[x.0].requires_grad {
                    let gx = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| {
                            let ch = i % c;
                            if *train {
                                gam[ch] * inv_std[ch] / rows * (rows * gi - sum_g[ch] - normalized[i] * sum_gh[ch])
                            } else {
                                gam[ch] * inv_std[ch] * gi
                            }
                        })
                        .collect();
                    acc(*x, gx);
                }
                acc(*gamma, sum_gh);
                acc(*beta, sum_g);
            }
            &Op::Sum { a } => acc(a, vec![g[0]; val(a).len()]),
            &Op::Mean { a } => {
                let n = val(a).len();
                acc(a, vec![g[0] / n as f64; n]);
            }
            &Op::SumAxis { a, axis } => {
                let shape = self.nodes[a.0].value.shape();
                let outer: usize = shape[..axis].iter().product();
                let len = shape[axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let mut ga = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        ga.extend_from_slice(&g[o * inner..][..inner]);
                    }
                }
                acc(a, ga);
            }
            Op::Concat { parts, axis } => {
                let axis = *axis;
                let shape = node.value.shape();
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[axis];
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.shape()[axis];
                    if self.nodes[p.0].requires_grad {
                        let mut gp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            gp.extend_from_slice(&g[(o * total + offset) * inner..][..len * inner]);
                        }
                        acc(p, gp);
                    }
                    offset += len;
                }
            }
            &Op::Narrow { a, axis, start } => {
                let shape = self.nodes[a.0].value.shape();
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let full = shape[axis];
                let len = node.value.shape()[axis];
                let mut ga = vec![0.0; val(a).len()];
                for o in 0..outer {
                    ga[(o * full + start) * inner..][..len * inner].copy_from_slice(&g[o * len * inner..][..len * inner]);
                }
                acc(a, ga);
            }
            Op::Permute { a, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                let (_, ga) = permute_data(g, node.value.shape(), &inverse);
                acc(*a, ga);
            }
            &Op::Reshape { a } => acc(a, g.to_vec()),
            &Op::PairwiseSum { a, b } => {
                let n = *self.nodes[a.0].value.shape().last().unwrap();
                let rows = val(a).len() / n;
                let mut ga = vec![0.0; rows * n];
                let mut gb = vec![0.0; rows * n];
                for r in 0..rows {
                    for i in 0..n {
                        let grow = &g[(r * n + i) * n..][..n];
                        ga[r * n + i] = grow.iter().sum();
                        for (j, gv) in grow.iter().enumerate() {
                            gb[r * n + j] += gv;
                        }
                    }
                }
                acc(a, ga);
                acc(b, gb);
            }
        }
    }
}
