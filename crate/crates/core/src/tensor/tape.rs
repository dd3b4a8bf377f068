//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends one node holding its output value. Nodes are
//! appended in evaluation order, so the tape is always a topological order
//! of the computation and [`Tape::backward`] simply walks it in reverse.

use std::fmt;

use super::conv::{self, ConvGeom, Plan};
use super::tensor::{all_finite, numel};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifier of each differentiable primitive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Leaf,
    Add,
    Sub,
    Mul,
    ScalarMul,
    AddScalar,
    Negate,
    Abs,
    Square,
    Exp,
    Recip,
    Relu,
    LeakyRelu,
    Tanh,
    MaxWithZero,
    Clamp,
    Sum,
    Mean,
    SumAxis,
    MeanAxis,
    Concat,
    Reshape,
    Permute,
    Slice,
    IndexSelect,
    Conv2d,
    Conv2dTranspose,
    InstanceNorm,
    L1Distance,
    SquaredError,
}

impl Primitive {
    pub const ALL: [Primitive; 29] = [
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::ScalarMul,
        Primitive::AddScalar,
        Primitive::Negate,
        Primitive::Abs,
        Primitive::Square,
        Primitive::Exp,
        Primitive::Recip,
        Primitive::Relu,
        Primitive::LeakyRelu,
        Primitive::Tanh,
        Primitive::MaxWithZero,
        Primitive::Clamp,
        Primitive::Sum,
        Primitive::Mean,
        Primitive::SumAxis,
        Primitive::MeanAxis,
        Primitive::Concat,
        Primitive::Reshape,
        Primitive::Permute,
        Primitive::Slice,
        Primitive::IndexSelect,
        Primitive::Conv2d,
        Primitive::Conv2dTranspose,
        Primitive::InstanceNorm,
        Primitive::L1Distance,
        Primitive::SquaredError,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Leaf => "leaf",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::ScalarMul => "scalar_mul",
            Primitive::AddScalar => "add_scalar",
            Primitive::Negate => "negate",
            Primitive::Abs => "abs",
            Primitive::Square => "square",
            Primitive::Exp => "exp",
            Primitive::Recip => "recip",
            Primitive::Relu => "relu",
            Primitive::LeakyRelu => "leaky_relu",
            Primitive::Tanh => "tanh",
            Primitive::MaxWithZero => "max_with_zero",
            Primitive::Clamp => "clamp",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::SumAxis => "sum_axis",
            Primitive::MeanAxis => "mean_axis",
            Primitive::Concat => "concat",
            Primitive::Reshape => "reshape",
            Primitive::Permute => "permute",
            Primitive::Slice => "slice",
            Primitive::IndexSelect => "index_select",
            Primitive::Conv2d => "conv2d",
            Primitive::Conv2dTranspose => "conv2d_transpose",
            Primitive::InstanceNorm => "instance_norm",
            Primitive::L1Distance => "l1_distance",
            Primitive::SquaredError => "squared_error",
        }
    }

    pub fn from_name(name: &str) -> Option<Primitive> {
        Primitive::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, T),
    AddScalar(Var),
    Negate(Var),
    Abs(Var),
    Square(Var),
    Exp(Var),
    Recip(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    MaxWithZero(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Slice { x: Var, axis: usize, start: usize },
    IndexSelect { x: Var, axis: usize, indices: Vec<usize> },
    Conv2d { x: Var, w: Var, b: Option<Var>, plan: Plan, cout: usize },
    Conv2dTranspose { x: Var, w: Var, b: Option<Var>, plan: Plan, cin: usize },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    L1Distance(Var, Var),
    SquaredError(Var, Var),
}

impl<T> Op<T> {
    fn primitive(&self) -> Primitive {
        match self {
            Op::Leaf => Primitive::Leaf,
            Op::Add(..) => Primitive::Add,
            Op::Sub(..) => Primitive::Sub,
            Op::Mul(..) => Primitive::Mul,
            Op::ScalarMul(..) => Primitive::ScalarMul,
            Op::AddScalar(..) => Primitive::AddScalar,
            Op::Negate(..) => Primitive::Negate,
            Op::Abs(..) => Primitive::Abs,
            Op::Square(..) => Primitive::Square,
            Op::Exp(..) => Primitive::Exp,
            Op::Recip(..) => Primitive::Recip,
            Op::Relu(..) => Primitive::Relu,
            Op::LeakyRelu(..) => Primitive::LeakyRelu,
            Op::Tanh(..) => Primitive::Tanh,
            Op::MaxWithZero(..) => Primitive::MaxWithZero,
            Op::Clamp(..) => Primitive::Clamp,
            Op::Sum(..) => Primitive::Sum,
            Op::Mean(..) => Primitive::Mean,
            Op::SumAxis(..) => Primitive::SumAxis,
            Op::MeanAxis(..) => Primitive::MeanAxis,
            Op::Concat(..) => Primitive::Concat,
            Op::Reshape(..) => Primitive::Reshape,
            Op::Permute(..) => Primitive::Permute,
            Op::Slice { .. } => Primitive::Slice,
            Op::IndexSelect { .. } => Primitive::IndexSelect,
            Op::Conv2d { .. } => Primitive::Conv2d,
            Op::Conv2dTranspose { .. } => Primitive::Conv2dTranspose,
            Op::InstanceNorm { .. } => Primitive::InstanceNorm,
            Op::L1Distance(..) => Primitive::L1Distance,
            Op::SquaredError(..) => Primitive::SquaredError,
        }
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// For each output element of `x.permute(perm)`, the flat index it reads.
fn permute_sources(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&a| shape[a]).collect();
    let step: Vec<usize> = perm.iter().map(|&a| in_strides[a]).collect();
    let total = numel(shape);
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    let mut src = 0usize;
    for _ in 0..total {
        out.push(src);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            src += step[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= step[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

/// Sign pattern of every kink-bearing primitive input, folded into a hash.
/// Two evaluations with different signatures sit on different sides of some
/// non-differentiable point.
#[derive(Default)]
struct KinkTracker {
    hash: u64,
}

impl KinkTracker {
    fn push(&mut self, region: u8) {
        self.hash ^= region as u64 + 1;
        self.hash = self.hash.wrapping_mul(0x0100_0000_01b3);
    }
}

/// Recording context for one forward/backward pass.
///
/// Single-threaded by contract: the tape is mutated by every primitive.
pub struct Tape<T: Real = f64> {
    values: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    grads: Vec<Option<Vec<T>>>,
    requires_grad: Vec<bool>,
    kinks: Option<KinkTracker>,
    fault: Option<Primitive>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            requires_grad: Vec::new(),
            kinks: None,
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Records sign patterns at non-differentiable points (used by the
    /// gradient checker).
    pub fn track_kinks(&mut self) {
        self.kinks = Some(KinkTracker::default());
    }

    pub(crate) fn kink_signature(&self) -> Option<u64> {
        self.kinks.as_ref().map(|k| k.hash)
    }

    /// Deliberately corrupts the backward rule of one primitive. Only used to
    /// prove that the gradient suites catch a broken rule.
    pub fn inject_fault(&mut self, primitive: Primitive) {
        self.fault = Some(primitive);
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let id = self.values.len();
        self.values.push(value);
        self.ops.push(op);
        self.grads.push(None);
        self.requires_grad.push(requires_grad);
        Var(id)
    }

    fn emit(&mut self, op: Op<T>, shape: Vec<usize>, data: Vec<T>, inputs: &[Var]) -> Result<Var> {
        let prim = op.primitive();
        if !all_finite(&data) {
            return Err(Error::NonFinite { op: prim.name() });
        }
        let rg = inputs.iter().any(|v| self.requires_grad[v.0]);
        Ok(self.push(Tensor::from_parts(shape, data), op, rg))
    }

    /// Adds a leaf. It receives gradients iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad();
        tensor.set_grad(None);
        self.push(tensor, Op::Leaf, rg)
    }

    /// Adds a leaf that receives gradients.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Adds a leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// A constant copy of `v`, cut from the gradient graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.values[v.0].clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.values[v.0].data()
    }

    pub fn item(&self, v: Var) -> Result<T> {
        self.values[v.0].item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    /// Accumulated gradient of a leaf, populated by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// The node value with its gradient buffer attached.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let mut t = self.values[v.0].clone();
        t.set_requires_grad(self.requires_grad[v.0]);
        t.set_grad(self.grads[v.0].clone());
        t
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch { op, lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(op.primitive().name(), a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.emit(op, shape, data, &[a, b])
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.emit(op, shape, data, &[a])
    }

    fn record_kinks(&mut self, a: Var, region: impl Fn(T) -> u8) {
        if let Some(k) = self.kinks.as_mut() {
            for &x in self.values[a.0].data() {
                k.push(region(x));
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scalar_mul(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        self.unary(a, Op::ScalarMul(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Negate(a), |x| -x)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.record_kinks(a, |x| (x >= T::zero()) as u8);
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    /// Elementwise `1 / x`.
    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Recip(a), |x| x.recip())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record_kinks(a, |x| (x > T::zero()) as u8);
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let s = T::of(slope);
        self.record_kinks(a, |x| (x > T::zero()) as u8);
        self.unary(a, Op::LeakyRelu(a, s), |x| if x > T::zero() { x } else { x * s })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    /// `max(0, x)`; same values as [`Tape::relu`], recorded as its own primitive.
    pub fn max_with_zero(&mut self, a: Var) -> Result<Var> {
        self.record_kinks(a, |x| (x > T::zero()) as u8);
        self.unary(a, Op::MaxWithZero(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    /// Clamps into `[lo, hi]`; the gradient passes through on the closed interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::invalid(format!("clamp bounds {lo} > {hi}")));
        }
        let (lo, hi) = (T::of(lo), T::of(hi));
        self.record_kinks(a, |x| {
            if x < lo {
                0
            } else if x > hi {
                2
            } else {
                1
            }
        });
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.data(a).iter().copied().sum();
        self.emit(Op::Sum(a), vec![], vec![s], &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = T::of(self.value(a).numel() as f64);
        let s: T = self.data(a).iter().copied().sum();
        self.emit(Op::Mean(a), vec![], vec![s / n], &[a])
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(a).len() {
            return Err(Error::InvalidShape {
                op,
                shape: self.shape(a).to_vec(),
                reason: format!("axis {axis} out of range"),
            });
        }
        Ok(())
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let name = if mean { "mean_axis" } else { "sum_axis" };
        self.check_axis(name, a, axis)?;
        let shape = self.shape(a).to_vec();
        let (outer, len, inner) = axis_extents(&shape, axis);
        let x = self.data(a);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &x[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        if mean {
            let n = T::of(len as f64);
            out.iter_mut().for_each(|v| *v /= n);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let op = if mean { Op::MeanAxis(a, axis) } else { Op::SumAxis(a, axis) };
        self.emit(op, out_shape, out, &[a])
    }

    /// Sums out one axis (the axis is removed from the shape).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch { op: "concat", lhs: base, rhs: s.to_vec() });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                out.extend_from_slice(&self.data(p)[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.emit(Op::Concat(parts.to_vec(), axis), shape, out, parts)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).numel() || shape.contains(&0) {
            return Err(Error::ShapeMismatch { op: "reshape", lhs: self.shape(a).to_vec(), rhs: shape.to_vec() });
        }
        let data = self.data(a).to_vec();
        self.emit(Op::Reshape(a), shape.to_vec(), data, &[a])
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid =
            perm.len() == shape.len() && perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::InvalidShape {
                op: "permute",
                shape,
                reason: format!("{perm:?} is not a permutation of the axes"),
            });
        }
        let src = permute_sources(&shape, perm);
        let x = self.data(a);
        let data = src.iter().map(|&i| x[i]).collect();
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        self.emit(Op::Permute(a, perm.to_vec()), out_shape, data, &[a])
    }

    /// `len` consecutive entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", a, axis)?;
        let shape = self.shape(a).to_vec();
        if len == 0 || start + len > shape[axis] {
            return Err(Error::InvalidShape {
                op: "slice",
                shape,
                reason: format!("range {start}..{} out of bounds on axis {axis}", start + len),
            });
        }
        let (outer, full, inner) = axis_extents(&shape, axis);
        let x = self.data(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.emit(Op::Slice { x: a, axis, start }, out_shape, out, &[a])
    }

    /// Gathers entries of `axis` (indices may repeat).
    pub fn index_select(&mut self, a: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        self.check_axis("index_select", a, axis)?;
        let shape = self.shape(a).to_vec();
        if indices.is_empty() || indices.iter().any(|&i| i >= shape[axis]) {
            return Err(Error::InvalidShape {
                op: "index_select",
                shape,
                reason: "index out of bounds or empty index list".into(),
            });
        }
        let (outer, full, inner) = axis_extents(&shape, axis);
        let x = self.data(a);
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * full + i) * inner;
                out.extend_from_slice(&x[base..base + inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = indices.len();
        let op = Op::IndexSelect { x: a, axis, indices: indices.to_vec() };
        self.emit(op, out_shape, out, &[a])
    }

    /// Rearranges `[N, C, H, W]` into non-overlapping `p x p` patches,
    /// `[N, (H/p)*(W/p), C, p*p]`, patches in row-major grid order.
    pub fn patch_extract(&mut self, a: Var, p: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || p == 0 || !s[2].is_multiple_of(p) || !s[3].is_multiple_of(p) {
            return Err(Error::InvalidShape {
                op: "patch_extract",
                shape: s,
                reason: format!("expected [N, C, H, W] with H, W divisible by {p}"),
            });
        }
        let (n, c, hp, wp) = (s[0], s[1], s[2] / p, s[3] / p);
        let r = self.reshape(a, &[n, c, hp, p, wp, p])?;
        let t = self.permute(r, &[0, 2, 4, 1, 3, 5])?;
        self.reshape(t, &[n, hp * wp, c, p * p])
    }

    /// 2-D convolution with zero padding. `x: [N, Cin, H, W]`,
    /// `w: [Cout, Cin, kh, kw]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let bs = b.map(|b| self.shape(b).to_vec());
        let (plan, cout) = conv::plan_conv2d(self.shape(x), self.shape(w), bs.as_deref(), ConvGeom::new(stride, pad))?;
        let out = conv::conv2d_forward(&plan, cout, self.data(x), self.data(w), b.map(|b| self.data(b)));
        let shape = vec![plan.n, cout, plan.ho, plan.wo];
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.emit(Op::Conv2d { x, w, b, plan, cout }, shape, out, &inputs)
    }

    /// Transposed 2-D convolution. `x: [N, Cin, Hi, Wi]`, `w: [Cin, Cout, kh, kw]`;
    /// output side `(Hi - 1) * stride - 2 * pad + kh + out_pad`.
    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Var> {
        let bs = b.map(|b| self.shape(b).to_vec());
        let geom = ConvGeom::transposed(stride, pad, out_pad);
        let (plan, cout) = conv::plan_conv2d_transpose(self.shape(x), self.shape(w), bs.as_deref(), geom)?;
        let cin = self.shape(x)[1];
        let out = conv::conv2d_transpose_forward(&plan, cin, self.data(x), self.data(w), b.map(|b| self.data(b)));
        let shape = vec![plan.n, cout, plan.h, plan.w];
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.emit(Op::Conv2dTranspose { x, w, b, plan, cin }, shape, out, &inputs)
    }

    /// Per-sample, per-channel normalization over the spatial axes, no affine.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] * s[3] < 2 {
            return Err(Error::InvalidShape {
                op: "instance_norm",
                shape: s,
                reason: "expected [N, C, H, W] with at least two spatial elements".into(),
            });
        }
        let area = s[2] * s[3];
        let eps = T::of(eps);
        let xs = self.data(x);
        let mut out = vec![T::zero(); xs.len()];
        let mut inv_std = Vec::with_capacity(s[0] * s[1]);
        let n = T::of(area as f64);
        for (src, dst) in xs.chunks(area).zip(out.chunks_mut(area)) {
            let mean = src.iter().copied().sum::<T>() / n;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = (var + eps).sqrt().recip();
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - mean) * is;
            }
            inv_std.push(is);
        }
        self.emit(Op::InstanceNorm { x, inv_std }, s, out, &[x])
    }

    /// Mean absolute difference, a scalar.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1_distance", a, b)?;
        if let Some(k) = self.kinks.as_mut() {
            for (&x, &y) in self.values[a.0].data().iter().zip(self.values[b.0].data()) {
                k.push((x >= y) as u8);
            }
        }
        let n = T::of(self.value(a).numel() as f64);
        let s: T = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| (x - y).abs()).sum();
        self.emit(Op::L1Distance(a, b), vec![], vec![s / n], &[a, b])
    }

    /// Mean squared difference, a scalar.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("squared_error", a, b)?;
        let n = T::of(self.value(a).numel() as f64);
        let s: T = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| (x - y) * (x - y)).sum();
        self.emit(Op::SquaredError(a, b), vec![], vec![s / n], &[a, b])
    }

    /// Back-propagates from a scalar `loss`, accumulating into leaf gradients.
    ///
    /// Leaf gradients accumulate across calls; every leaf that requires a
    /// gradient ends up with a buffer, zero if it did not contribute.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if self.requires_grad[loss.0] {
            accumulate(&mut self.grads, loss, 1, |g| g[0] += T::one());
        }
        for i in (0..=loss.0).rev() {
            if matches!(self.ops[i], Op::Leaf) || !self.requires_grad[i] {
                continue;
            }
            let Some(mut g) = self.grads[i].take() else {
                continue;
            };
            if self.fault == Some(self.ops[i].primitive()) {
                g.iter_mut().for_each(|v| *v *= T::of(1.5));
            }
            self.backprop_node(i, &g);
        }
        for i in 0..self.values.len() {
            if self.requires_grad[i] && matches!(self.ops[i], Op::Leaf) && self.grads[i].is_none() {
                self.grads[i] = Some(vec![T::zero(); self.values[i].numel()]);
            }
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[T]) {
        let values = &self.values;
        let grads = &mut self.grads;
        let rg = &self.requires_grad;
        let val = |v: Var| values[v.0].data();
        let y = values[i].data();
        // Accumulates `f(k)` into element `k` of the gradient of `v`.
        let mut acc_map = |v: Var, f: &dyn Fn(usize) -> T| {
            if rg[v.0] {
                accumulate(grads, v, values[v.0].numel(), |d| {
                    for (k, d) in d.iter_mut().enumerate() {
                        *d += f(k);
                    }
                });
            }
        };
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc_map(*a, &|k| g[k]);
                acc_map(*b, &|k| g[k]);
            }
            Op::Sub(a, b) => {
                acc_map(*a, &|k| g[k]);
                acc_map(*b, &|k| -g[k]);
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                acc_map(*a, &|k| g[k] * xb[k]);
                acc_map(*b, &|k| g[k] * xa[k]);
            }
            Op::ScalarMul(a, s) => acc_map(*a, &|k| g[k] * *s),
            Op::AddScalar(a) | Op::Reshape(a) => acc_map(*a, &|k| g[k]),
            Op::Negate(a) => acc_map(*a, &|k| -g[k]),
            Op::Abs(a) => {
                let x = val(*a);
                acc_map(*a, &|k| {
                    if x[k] > T::zero() {
                        g[k]
                    } else if x[k] < T::zero() {
                        -g[k]
                    } else {
                        T::zero()
                    }
                });
            }
            Op::Square(a) => {
                let x = val(*a);
                acc_map(*a, &|k| g[k] * T::of(2.0) * x[k]);
            }
            Op::Exp(a) => acc_map(*a, &|k| g[k] * y[k]),
            Op::Recip(a) => acc_map(*a, &|k| -g[k] * y[k] * y[k]),
            Op::Relu(a) | Op::MaxWithZero(a) => {
                let x = val(*a);
                acc_map(*a, &|k| if x[k] > T::zero() { g[k] } else { T::zero() });
            }
            Op::LeakyRelu(a, s) => {
                let x = val(*a);
                acc_map(*a, &|k| if x[k] > T::zero() { g[k] } else { g[k] * *s });
            }
            Op::Tanh(a) => acc_map(*a, &|k| g[k] * (T::one() - y[k] * y[k])),
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                acc_map(*a, &|k| if x[k] >= *lo && x[k] <= *hi { g[k] } else { T::zero() });
            }
            Op::Sum(a) => acc_map(*a, &|_| g[0]),
            Op::Mean(a) => {
                let n = T::of(values[a.0].numel() as f64);
                acc_map(*a, &|_| g[0] / n);
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let (_, len, inner) = axis_extents(values[a.0].shape(), *axis);
                let scale = if matches!(self.ops[i], Op::MeanAxis(..)) { T::of(len as f64).recip() } else { T::one() };
                acc_map(*a, &|k| {
                    let o = k / (len * inner);
                    g[o * inner + k % inner] * scale
                });
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = axis_extents(values[i].shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = values[p.0].shape()[*axis];
                    if rg[p.0] {
                        accumulate(grads, p, values[p.0].numel(), |d| {
                            for o in 0..outer {
                                let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                                for (d, &s) in d[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        });
                    }
                    offset += len;
                }
            }
            Op::Permute(a, perm) => {
                if rg[a.0] {
                    let src = permute_sources(values[a.0].shape(), perm);
                    accumulate(grads, *a, values[a.0].numel(), |d| {
                        for (k, &s) in src.iter().enumerate() {
                            d[s] += g[k];
                        }
                    });
                }
            }
            Op::Slice { x, axis, start } => {
                if rg[x.0] {
                    let (outer, full, inner) = axis_extents(values[x.0].shape(), *axis);
                    let len = values[i].shape()[*axis];
                    accumulate(grads, *x, values[x.0].numel(), |d| {
                        for o in 0..outer {
                            let base = (o * full + start) * inner;
                            for (d, &s) in
                                d[base..base + len * inner].iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner])
                            {
                                *d += s;
                            }
                        }
                    });
                }
            }
            Op::IndexSelect { x, axis, indices } => {
                if rg[x.0] {
                    let (outer, full, inner) = axis_extents(values[x.0].shape(), *axis);
                    let len = indices.len();
                    accumulate(grads, *x, values[x.0].numel(), |d| {
                        for o in 0..outer {
                            for (j, &src) in indices.iter().enumerate() {
                                let base = (o * full + src) * inner;
                                let from = &g[(o * len + j) * inner..(o * len + j + 1) * inner];
                                for (d, &s) in d[base..base + inner].iter_mut().zip(from) {
                                    *d += s;
                                }
                            }
                        }
                    });
                }
            }
            Op::Conv2d { x, w, b, plan, cout } => {
                let (x, w, b) = (*x, *w, *b);
                let mut dx = rg[x.0].then(|| take_or_zero(grads, x, values[x.0].numel()));
                let mut dw = rg[w.0].then(|| take_or_zero(grads, w, values[w.0].numel()));
                let mut db = b.filter(|b| rg[b.0]).map(|b| take_or_zero(grads, b, values[b.0].numel()));
                conv::conv2d_backward(
                    plan,
                    *cout,
                    val(x),
                    val(w),
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                put_back(grads, x, dx);
                put_back(grads, w, dw);
                if let Some(b) = b {
                    put_back(grads, b, db);
                }
            }
            Op::Conv2dTranspose { x, w, b, plan, cin } => {
                let (x, w, b) = (*x, *w, *b);
                let mut dx = rg[x.0].then(|| take_or_zero(grads, x, values[x.0].numel()));
                let mut dw = rg[w.0].then(|| take_or_zero(grads, w, values[w.0].numel()));
                let mut db = b.filter(|b| rg[b.0]).map(|b| take_or_zero(grads, b, values[b.0].numel()));
                conv::conv2d_transpose_backward(
                    plan,
                    *cin,
                    val(x),
                    val(w),
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                put_back(grads, x, dx);
                put_back(grads, w, dw);
                if let Some(b) = b {
                    put_back(grads, b, db);
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                if rg[x.0] {
                    let s = values[x.0].shape();
                    let area = s[2] * s[3];
                    let n = T::of(area as f64);
                    accumulate(grads, *x, values[x.0].numel(), |d| {
                        for (c, ((dc, gc), yc)) in
                            d.chunks_mut(area).zip(g.chunks(area)).zip(y.chunks(area)).enumerate()
                        {
                            let mean_g = gc.iter().copied().sum::<T>() / n;
                            let mean_gy = gc.iter().zip(yc).map(|(&a, &b)| a * b).sum::<T>() / n;
                            for ((d, &gv), &yv) in dc.iter_mut().zip(gc).zip(yc) {
                                *d += inv_std[c] * (gv - mean_g - yv * mean_gy);
                            }
                        }
                    });
                }
            }
            Op::L1Distance(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                let scale = g[0] / T::of(xa.len() as f64);
                let sign = |k: usize| {
                    let d = xa[k] - xb[k];
                    if d > T::zero() {
                        scale
                    } else if d < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                };
                acc_map(*a, &sign);
                acc_map(*b, &|k| -sign(k));
            }
            Op::SquaredError(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                let scale = g[0] * T::of(2.0) / T::of(xa.len() as f64);
                acc_map(*a, &|k| scale * (xa[k] - xb[k]));
                acc_map(*b, &|k| -scale * (xa[k] - xb[k]));
            }
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize, f: impl FnOnce(&mut [T])) {
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
    f(slot);
}

fn take_or_zero<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> Vec<T> {
    grads[v.0].take().unwrap_or_else(|| vec![T::zero(); len])
}

fn put_back<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, g: Option<Vec<T>>) {
    if let Some(g) = g {
        grads[v.0] = Some(g);
    }
}
