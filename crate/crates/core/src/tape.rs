//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its output value and the ids of its
//! parents. Parents always precede children, so a single reverse sweep over the
//! node list visits each node once, after all of its consumers.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::{gemm, MatView, Real};
use crate::tensor::{numel, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    tape: u64,
}

impl Var {
    pub fn index(self) -> usize {
        self.id
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    InferStochastic,
    InferOff,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize, batch: usize, m: usize, k: usize, n: usize, shared_rhs: bool },
    Permute { a: usize, axes: Vec<usize> },
    Reshape { a: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, s: T },
    AddScalar { a: usize },
    AddBias { a: usize, bias: usize },
    MulConst { a: usize, c: Vec<T> },
    Softmax { a: usize },
    LayerNorm { a: usize, gain: usize, bias: usize, xhat: Vec<T>, inv_std: Vec<T> },
    Sigmoid { a: usize },
    Softplus { a: usize },
    Ln { a: usize },
    Abs { a: usize },
    Square { a: usize },
    Clamp { a: usize, lo: T, hi: T },
    Sum { a: usize },
    Mean { a: usize },
    Bilinear { a: usize, h: usize, w: usize, oh: usize, ow: usize },
    Stack { parts: Vec<usize> },
    KlStdNormal { mu: usize, rho: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to the requires-grad leaves of a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `var`; all zeros when it did not influence the loss.
    pub fn wrt(&self, var: Var) -> Result<Tensor<T>> {
        if var.tape != self.tape {
            return Err(Error::ForeignTensor);
        }
        let shape = self.shapes[var.id].clone();
        Ok(match &self.grads[var.id] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(&shape),
        })
    }

    /// Moves the gradient out, avoiding a copy.
    pub fn take(&mut self, var: Var) -> Result<Vec<T>> {
        if var.tape != self.tape {
            return Err(Error::ForeignTensor);
        }
        Ok(self.grads[var.id].take().unwrap_or_else(|| vec![T::zero(); numel(&self.shapes[var.id])]))
    }
}

fn softplus_scalar<T: Real>(x: T) -> T {
    let x64 = x.f64();
    if x64 > 20.0 {
        x
    } else if x64 < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `softplus(x) = ln(1 + e^x)`, evaluated without overflow.
pub fn softplus<T: Real>(x: T) -> T {
    softplus_scalar(x)
}

pub fn sigmoid<T: Real>(x: T) -> T {
    sigmoid_scalar(x)
}

/// `ln(softplus(x))`, exact in the far negative tail where softplus underflows.
pub fn ln_softplus<T: Real>(x: T) -> T {
    if x.f64() < -20.0 {
        x
    } else {
        softplus_scalar(x).ln()
    }
}

/// Elementwise KL(N(mu, softplus(rho)^2) || N(0, 1)).
pub fn kl_term<T: Real>(mu: T, rho: T) -> T {
    let sigma = softplus_scalar(rho);
    let half = T::of(0.5);
    half * (mu * mu + sigma * sigma - T::of(2.0) * ln_softplus(rho) - T::one())
}

/// d kl_term / d rho.
fn kl_term_drho<T: Real>(rho: T) -> T {
    let sigma = softplus_scalar(rho);
    let sig = sigmoid_scalar(rho);
    // sigmoid(rho) / softplus(rho) -> 1 as rho -> -inf
    let ratio = if rho.f64() < -20.0 { T::one() } else { sig / sigma };
    sigma * sig - ratio
}

/// Applies a permutation of axes to row-major data.
pub(crate) fn permute_data<T: Copy>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let mut src_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        src_strides[d] = src_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if rank == 0 {
        out.extend_from_slice(data);
        return (out, out_shape);
    }
    let inner = rank - 1;
    let inner_len = out_shape[inner];
    let inner_stride = strides[inner];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    while out.len() < total {
        let mut s = base;
        for _ in 0..inner_len {
            out.push(data[s]);
            s += inner_stride;
        }
        // odometer over the outer axes
        let mut d = inner;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            base += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

fn bilinear_axis(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let l = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, l)
        })
        .collect()
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(Error::ForeignTensor);
        }
        Ok(v.id)
    }

    fn var(&self, id: usize) -> Var {
        Var { id, tape: self.id }
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let tracked = match &op {
            Op::Leaf => false,
            other => parents(other).iter().any(|&p| self.nodes[p].tracked),
        };
        self.nodes.push(Node { value: Tensor::from_parts(shape, data), op, tracked });
        Ok(self.var(self.nodes.len() - 1))
    }

    /// Records a leaf. Gradients are accumulated for it iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let tracked = tensor.requires_grad;
        let mut tensor = tensor;
        tensor.grad = None;
        self.nodes.push(Node { value: tensor, op: Op::Leaf, tracked });
        self.var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_grad())
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        let mut t = tensor;
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable from a different tape");
        &self.nodes[v.id].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    // ---- linear algebra -------------------------------------------------

    /// Batched matrix product. `b` is either 2-D (shared across the batch) or
    /// carries the same leading dims as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let sa = self.nodes[ai].value.shape().to_vec();
        let sb = self.nodes[bi].value.shape().to_vec();
        let mismatch = || Error::Dimension { op: "matmul", lhs: sa.clone(), rhs: sb.clone() };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let shared_rhs = sb.len() == 2;
        if !shared_rhs && sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(mismatch());
        }
        let batch = numel(&sa[..sa.len() - 2]);
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![T::zero(); batch * m * n];
        {
            let ad = self.nodes[ai].value.data();
            let bd = self.nodes[bi].value.data();
            if shared_rhs {
                gemm(MatView::new(ad, batch * m, k), MatView::new(bd, k, n), &mut out, false);
            } else {
                for bt in 0..batch {
                    gemm(
                        MatView::new(&ad[bt * m * k..(bt + 1) * m * k], m, k),
                        MatView::new(&bd[bt * k * n..(bt + 1) * k * n], k, n),
                        &mut out[bt * m * n..(bt + 1) * m * n],
                        false,
                    );
                }
            }
        }
        self.push("matmul", out_shape, out, Op::MatMul { a: ai, b: bi, batch, m, k, n, shared_rhs })
    }

    /// Reorders axes: output axis `j` is input axis `axes[j]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let ai = self.check(a)?;
        let shape = self.nodes[ai].value.shape().to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes.iter().all(|&x| x < shape.len() && !std::mem::replace(&mut seen[x], true));
        if !valid {
            return Err(Error::Dimension { op: "permute", lhs: shape, rhs: axes.to_vec() });
        }
        let (data, out_shape) = permute_data(self.nodes[ai].value.data(), &shape, axes);
        self.push("permute", out_shape, data, Op::Permute { a: ai, axes: axes.to_vec() })
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len();
        if rank < 2 {
            return Err(Error::Dimension { op: "transpose", lhs: self.shape(a).to_vec(), rhs: vec![] });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ai = self.check(a)?;
        let v = self.nodes[ai].value.reshaped(shape)?;
        let (shape, data) = (v.shape().to_vec(), v.into_data());
        self.push("reshape", shape, data, Op::Reshape { a: ai })
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(usize, usize, Vec<usize>, Vec<T>)> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        if va.shape() != vb.shape() {
            return Err(Error::Dimension { op: name, lhs: va.shape().to_vec(), rhs: vb.shape().to_vec() });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((ai, bi, va.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, s, d) = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", s, d, Op::Add { a: ai, b: bi })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, s, d) = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", s, d, Op::Sub { a: ai, b: bi })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, s, d) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", s, d, Op::Mul { a: ai, b: bi })
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T) -> Result<(usize, Vec<usize>, Vec<T>)> {
        let ai = self.check(a)?;
        let v = &self.nodes[ai].value;
        Ok((ai, v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect()))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        let (ai, shape, d) = self.unary(a, |x| x * s)?;
        self.push("scale", shape, d, Op::Scale { a: ai, s })
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        let (ai, shape, d) = self.unary(a, |x| x + s)?;
        self.push("add_scalar", shape, d, Op::AddScalar { a: ai })
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(bias)?);
        let (va, vb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        let d = *va.shape().last().unwrap();
        if vb.len() != d || vb.shape().len() != 1 {
            return Err(Error::Dimension { op: "add_bias", lhs: va.shape().to_vec(), rhs: vb.shape().to_vec() });
        }
        let bd = vb.data();
        let data = va.data().chunks(d).flat_map(|row| row.iter().zip(bd).map(|(&x, &y)| x + y)).collect();
        let shape = va.shape().to_vec();
        self.push("add_bias", shape, data, Op::AddBias { a: ai, bias: bi })
    }

    /// Multiplies by a fixed (non-differentiable) array of the same size.
    pub fn mul_const(&mut self, a: Var, c: Vec<T>) -> Result<Var> {
        let ai = self.check(a)?;
        let v = &self.nodes[ai].value;
        if c.len() != v.len() {
            return Err(Error::Dimension { op: "mul_const", lhs: v.shape().to_vec(), rhs: vec![c.len()] });
        }
        let data = v.data().iter().zip(&c).map(|(&x, &y)| x * y).collect();
        let shape = v.shape().to_vec();
        self.push("mul_const", shape, data, Op::MulConst { a: ai, c })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let (ai, shape, d) = self.unary(a, sigmoid_scalar)?;
        self.push("sigmoid", shape, d, Op::Sigmoid { a: ai })
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let (ai, shape, d) = self.unary(a, softplus_scalar)?;
        self.push("softplus", shape, d, Op::Softplus { a: ai })
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let (ai, shape, d) = self.unary(a, |x| x.ln())?;
        self.push("ln", shape, d, Op::Ln { a: ai })
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let (ai, shape, d) = self.unary(a, |x| x.abs())?;
        self.push("abs", shape, d, Op::Abs { a: ai })
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let (ai, shape, d) = self.unary(a, |x| x * x)?;
        self.push("square", shape, d, Op::Square { a: ai })
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (T::of(lo), T::of(hi));
        let (ai, shape, d) = self.unary(a, |x| x.max(lo).min(hi))?;
        self.push("clamp", shape, d, Op::Clamp { a: ai, lo, hi })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let s = self.nodes[ai].value.data().iter().copied().sum();
        self.push("sum", vec![1], vec![s], Op::Sum { a: ai })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let v = &self.nodes[ai].value;
        let s: T = v.data().iter().copied().sum();
        let m = s / T::of(v.len() as f64);
        self.push("mean", vec![1], vec![m], Op::Mean { a: ai })
    }

    // ---- neural-network ops ---------------------------------------------

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let v = &self.nodes[ai].value;
        let d = *v.shape().last().unwrap();
        let mut out = Vec::with_capacity(v.len());
        for row in v.data().chunks(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = out.len();
            let mut total = T::zero();
            for &x in row {
                let e = (x - max).exp();
                total += e;
                out.push(e);
            }
            out[start..].iter_mut().for_each(|e| *e = *e / total);
        }
        let shape = v.shape().to_vec();
        self.push("softmax", shape, out, Op::Softmax { a: ai })
    }

    /// Layer normalization over the last axis with epsilon 1e-5.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (ai, gi, bi) = (self.check(a)?, self.check(gain)?, self.check(bias)?);
        let v = &self.nodes[ai].value;
        let d = *v.shape().last().unwrap();
        if d < 2 {
            return Err(Error::Degenerate { op: "layer_norm", detail: format!("last dim {d} < 2") });
        }
        let (g, b) = (&self.nodes[gi].value, &self.nodes[bi].value);
        if g.shape() != [d] || b.shape() != [d] {
            return Err(Error::Dimension { op: "layer_norm", lhs: v.shape().to_vec(), rhs: g.shape().to_vec() });
        }
        let (gd, bd) = (g.data(), b.data());
        let n = T::of(d as f64);
        let mut out = Vec::with_capacity(v.len());
        let mut xhat = Vec::with_capacity(v.len());
        let mut inv_std = Vec::with_capacity(v.len() / d);
        for row in v.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::of(EPS)).sqrt();
            inv_std.push(is);
            for (j, &x) in row.iter().enumerate() {
                let xh = (x - mean) * is;
                xhat.push(xh);
                out.push(xh * gd[j] + bd[j]);
            }
        }
        let shape = v.shape().to_vec();
        self.push("layer_norm", shape, out, Op::LayerNorm { a: ai, gain: gi, bias: bi, xhat, inv_std })
    }

    /// Bilinear resampling of the last two axes (align-corners false).
    pub fn bilinear_upsample(&mut self, a: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let ai = self.check(a)?;
        let v = &self.nodes[ai].value;
        let shape = v.shape().to_vec();
        if shape.len() < 2 || out_h == 0 || out_w == 0 {
            return Err(Error::Degenerate { op: "bilinear_upsample", detail: format!("{shape:?} -> {out_h}x{out_w}") });
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if out_h < h || out_w < w {
            return Err(Error::Dimension { op: "bilinear_upsample", lhs: shape, rhs: vec![out_h, out_w] });
        }
        let (ys, xs) = (bilinear_axis(h, out_h), bilinear_axis(w, out_w));
        let planes = v.len() / (h * w);
        let mut out = Vec::with_capacity(planes * out_h * out_w);
        for p in v.data().chunks(h * w).take(planes) {
            for &(y0, y1, ly) in &ys {
                let ly = T::of(ly);
                for &(x0, x1, lx) in &xs {
                    let lx = T::of(lx);
                    let top = p[y0 * w + x0] * (T::one() - lx) + p[y0 * w + x1] * lx;
                    let bot = p[y1 * w + x0] * (T::one() - lx) + p[y1 * w + x1] * lx;
                    out.push(top * (T::one() - ly) + bot * ly);
                }
            }
        }
        let mut out_shape = shape[..shape.len() - 2].to_vec();
        out_shape.extend([out_h, out_w]);
        self.push("bilinear_upsample", out_shape, out, Op::Bilinear { a: ai, h, w, oh: out_h, ow: out_w })
    }

    /// Stacks equally shaped values along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>>>()?;
        let first = ids.first().ok_or(Error::TooFew { what: "stack inputs", need: 1, got: 0 })?;
        let shape = self.nodes[*first].value.shape().to_vec();
        let mut data = Vec::with_capacity(numel(&shape) * ids.len());
        for &i in &ids {
            let v = &self.nodes[i].value;
            if v.shape() != shape.as_slice() {
                return Err(Error::Dimension { op: "stack", lhs: shape, rhs: v.shape().to_vec() });
            }
            data.extend_from_slice(v.data());
        }
        let mut out_shape = vec![ids.len()];
        out_shape.extend(shape);
        self.push("stack", out_shape, data, Op::Stack { parts: ids })
    }

    /// Closed-form KL divergence of N(mu, softplus(rho)^2) from N(0, 1), summed.
    pub fn kl_std_normal(&mut self, mu: Var, rho: Var) -> Result<Var> {
        let (mi, ri) = (self.check(mu)?, self.check(rho)?);
        let (vm, vr) = (&self.nodes[mi].value, &self.nodes[ri].value);
        if vm.shape() != vr.shape() {
            return Err(Error::Dimension { op: "kl", lhs: vm.shape().to_vec(), rhs: vr.shape().to_vec() });
        }
        let total = vm.data().iter().zip(vr.data()).map(|(&m, &r)| kl_term(m, r)).sum();
        self.push("kl", vec![1], vec![total], Op::KlStdNormal { mu: mi, rho: ri })
    }

    /// Inverted dropout. Identity when `p == 0` or in `InferOff` mode.
    pub fn dropout(&mut self, a: Var, p: f64, mode: DropoutMode, seed: u64) -> Result<Var> {
        self.check(a)?;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 || mode == DropoutMode::InferOff {
            return Ok(a);
        }
        let n = self.value(a).len();
        let keep = T::of(1.0 / (1.0 - p));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = (0..n).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect();
        self.mul_const(a, mask)
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.tape != self.id {
            return Err(Error::ForeignTensor);
        }
        let li = self.check(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::NotScalar(self.nodes[li].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[li] = Some(vec![T::one()]);
        for i in (0..=li).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        // Only leaves asking for gradients keep them.
        for (i, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.value.requires_grad) {
                grads[i] = None;
            }
        }
        Ok(Gradients { tape: self.id, grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |j: usize| self.nodes[j].value.data();
        let wants = |j: usize| self.nodes[j].tracked;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, batch, m, k, n, shared_rhs } => {
                let (a, b, batch, m, k, n) = (*a, *b, *batch, *m, *k, *n);
                if wants(a) {
                    let mut da = vec![T::zero(); batch * m * k];
                    if *shared_rhs {
                        gemm(MatView::new(g, batch * m, n), MatView::new(val(b), k, n).t(), &mut da, false);
                    } else {
                        for bt in 0..batch {
                            gemm(
                                MatView::new(&g[bt * m * n..(bt + 1) * m * n], m, n),
                                MatView::new(&val(b)[bt * k * n..(bt + 1) * k * n], k, n).t(),
                                &mut da[bt * m * k..(bt + 1) * m * k],
                                false,
                            );
                        }
                    }
                    accumulate(grads, a, da);
                }
                if wants(b) {
                    if *shared_rhs {
                        let mut db = vec![T::zero(); k * n];
                        gemm(MatView::new(val(a), batch * m, k).t(), MatView::new(g, batch * m, n), &mut db, false);
                        accumulate(grads, b, db);
                    } else {
                        let mut db = vec![T::zero(); batch * k * n];
                        for bt in 0..batch {
                            gemm(
                                MatView::new(&val(a)[bt * m * k..(bt + 1) * m * k], m, k).t(),
                                MatView::new(&g[bt * m * n..(bt + 1) * m * n], m, n),
                                &mut db[bt * k * n..(bt + 1) * k * n],
                                false,
                            );
                        }
                        accumulate(grads, b, db);
                    }
                }
            }
            Op::Permute { a, axes } => {
                if wants(*a) {
                    let mut inverse = vec![0; axes.len()];
                    for (j, &ax) in axes.iter().enumerate() {
                        inverse[ax] = j;
                    }
                    let (da, _) = permute_data(g, node.value.shape(), &inverse);
                    accumulate(grads, *a, da);
                }
            }
            Op::Reshape { a } => {
                if wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
            }
            Op::Add { a, b } => {
                if wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.iter().map(|&x| -x).collect());
                }
            }
            Op::Mul { a, b } => {
                if wants(*a) {
                    accumulate(grads, *a, g.iter().zip(val(*b)).map(|(&x, &y)| x * y).collect());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.iter().zip(val(*a)).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::Scale { a, s } => {
                if wants(*a) {
                    accumulate(grads, *a, g.iter().map(|&x| x * *s).collect());
                }
            }
            Op::AddScalar { a } => {
                if wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
            }
            Op::AddBias { a, bias } => {
                if wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if wants(*bias) {
                    let d = self.nodes[*bias].value.len();
                    let mut db = vec![T::zero(); d];
                    for row in g.chunks(d) {
                        db.iter_mut().zip(row).for_each(|(s, &x)| *s += x);
                    }
                    accumulate(grads, *bias, db);
                }
            }
            Op::MulConst { a, c } => {
                if wants(*a) {
                    accumulate(grads, *a, g.iter().zip(c).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::Softmax { a } => {
                if wants(*a) {
                    let d = *node.value.shape().last().unwrap();
                    let mut da = Vec::with_capacity(g.len());
                    for (gy, y) in g.chunks(d).zip(out.chunks(d)) {
                        let dot: T = gy.iter().zip(y).map(|(&p, &q)| p * q).sum();
                        da.extend(gy.iter().zip(y).map(|(&p, &q)| q * (p - dot)));
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::LayerNorm { a, gain, bias, xhat, inv_std } => {
                let d = *node.value.shape().last().unwrap();
                let gd = val(*gain);
                if wants(*gain) {
                    let mut dg = vec![T::zero(); d];
                    for (gy, xh) in g.chunks(d).zip(xhat.chunks(d)) {
                        dg.iter_mut().zip(gy.iter().zip(xh)).for_each(|(s, (&p, &q))| *s += p * q);
                    }
                    accumulate(grads, *gain, dg);
                }
                if wants(*bias) {
                    let mut db = vec![T::zero(); d];
                    for gy in g.chunks(d) {
                        db.iter_mut().zip(gy).for_each(|(s, &p)| *s += p);
                    }
                    accumulate(grads, *bias, db);
                }
                if wants(*a) {
                    let n = T::of(d as f64);
                    let mut da = Vec::with_capacity(g.len());
                    for ((gy, xh), &is) in g.chunks(d).zip(xhat.chunks(d)).zip(inv_std) {
                        let dxh: Vec<T> = gy.iter().zip(gd).map(|(&p, &q)| p * q).collect();
                        let s1: T = dxh.iter().copied().sum();
                        let s2: T = dxh.iter().zip(xh).map(|(&p, &q)| p * q).sum();
                        da.extend(dxh.iter().zip(xh).map(|(&dx, &x)| is / n * (n * dx - s1 - x * s2)));
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::Sigmoid { a } => {
                if wants(*a) {
                    accumulate(grads, *a, g.iter().zip(out).map(|(&p, &y)| p * y * (T::one() - y)).collect());
                }
            }
            Op::Softplus { a } => {
                if wants(*a) {
                    accumulate(grads, *a, g.iter().zip(val(*a)).map(|(&p, &x)| p * sigmoid_scalar(x)).collect());
                }
            }
            Op::Ln { a } => {
                if wants(*a) {
                    accumulate(grads, *a, g.iter().zip(val(*a)).map(|(&p, &x)| p / x).collect());
                }
            }
            Op::Abs { a } => {
                if wants(*a) {
                    let sign = |x: T| if x > T::zero() { T::one() } else if x < T::zero() { -T::one() } else { T::zero() };
                    accumulate(grads, *a, g.iter().zip(val(*a)).map(|(&p, &x)| p * sign(x)).collect());
                }
            }
            Op::Square { a } => {
                if wants(*a) {
                    accumulate(grads, *a, g.iter().zip(val(*a)).map(|(&p, &x)| p * T::of(2.0) * x).collect());
                }
            }
            Op::Clamp { a, lo, hi } => {
                if wants(*a) {
                    let (lo, hi) = (*lo, *hi);
                    accumulate(
                        grads,
                        *a,
                        g.iter().zip(val(*a)).map(|(&p, &x)| if x >= lo && x <= hi { p } else { T::zero() }).collect(),
                    );
                }
            }
            Op::Sum { a } => {
                if wants(*a) {
                    accumulate(grads, *a, vec![g[0]; self.nodes[*a].value.len()]);
                }
            }
            Op::Mean { a } => {
                if wants(*a) {
                    let n = self.nodes[*a].value.len();
                    accumulate(grads, *a, vec![g[0] / T::of(n as f64); n]);
                }
            }
            Op::Bilinear { a, h, w, oh, ow } => {
                if wants(*a) {
                    let (h, w) = (*h, *w);
                    let (ys, xs) = (bilinear_axis(h, *oh), bilinear_axis(w, *ow));
                    let planes = self.nodes[*a].value.len() / (h * w);
                    let mut da = vec![T::zero(); planes * h * w];
                    for (p, gp) in da.chunks_mut(h * w).zip(g.chunks(oh * ow)) {
                        let mut o = 0;
                        for &(y0, y1, ly) in &ys {
                            let ly = T::of(ly);
                            for &(x0, x1, lx) in &xs {
                                let lx = T::of(lx);
                                let v = gp[o];
                                o += 1;
                                p[y0 * w + x0] += v * (T::one() - ly) * (T::one() - lx);
                                p[y0 * w + x1] += v * (T::one() - ly) * lx;
                                p[y1 * w + x0] += v * ly * (T::one() - lx);
                                p[y1 * w + x1] += v * ly * lx;
                            }
                        }
                    }
                    accumulate(grads, *a, da);
                }
            }
            Op::Stack { parts } => {
                let chunk = g.len() / parts.len();
                for (j, &p) in parts.iter().enumerate() {
                    if wants(p) {
                        accumulate(grads, p, g[j * chunk..(j + 1) * chunk].to_vec());
                    }
                }
            }
            Op::KlStdNormal { mu, rho } => {
                let s = g[0];
                if wants(*mu) {
                    accumulate(grads, *mu, val(*mu).iter().map(|&m| s * m).collect());
                }
                if wants(*rho) {
                    accumulate(grads, *rho, val(*rho).iter().map(|&r| s * kl_term_drho(r)).collect());
                }
            }
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], target: usize, contribution: Vec<T>) {
    match &mut grads[target] {
        Some(existing) => existing.iter_mut().zip(contribution).for_each(|(e, c)| *e += c),
        slot @ None => *slot = Some(contribution),
    }
}

fn parents<T>(op: &Op<T>) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul { a, b, .. } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => vec![*a, *b],
        Op::AddBias { a, bias } => vec![*a, *bias],
        Op::LayerNorm { a, gain, bias, .. } => vec![*a, *gain, *bias],
        Op::KlStdNormal { mu, rho } => vec![*mu, *rho],
        Op::Stack { parts } => parts.clone(),
        Op::Permute { a, .. }
        | Op::Reshape { a }
        | Op::Scale { a, .. }
        | Op::AddScalar { a }
        | Op::MulConst { a, .. }
        | Op::Softmax { a }
        | Op::Sigmoid { a }
        | Op::Softplus { a }
        | Op::Ln { a }
        | Op::Abs { a }
        | Op::Square { a }
        | Op::Clamp { a, .. }
        | Op::Sum { a }
        | Op::Mean { a }
        | Op::Bilinear { a, .. } => vec![*a],
    }
}
