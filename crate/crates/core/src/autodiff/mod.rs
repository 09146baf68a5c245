//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! The operator set is exactly what the light-field network and its loss need:
//! fully connected layers, 3×3 convolution, pixel shuffle, SiLU, sigmoid,
//! elementwise arithmetic, reductions, crop/reshape, and a fixed-kernel
//! depthwise convolution used for SSIM windows.
//!
//! Every operation is appended to a [`Tape`]; [`Tape::backward`] walks the
//! tape in reverse once and then clears it. Values are generic over [`Real`],
//! so the same graph can be run in `f32` for training or `f64` for tight
//! gradient checks.

mod gradcheck;
mod kernels;

use std::fmt::Debug;
use std::iter::Sum;
use std::sync::Arc;

use num_traits::Float;
use thiserror::Error;

pub use gradcheck::finite_difference_check;

pub trait Real: Float + Sum + Debug + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
}

/// Smallest divisor magnitude accepted by [`Tape::div`].
pub const DIV_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("div: divisor magnitude below {DIV_EPSILON:e}")]
    DivisorTooSmall,
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tape already consumed by backward; record a new forward pass")]
    TapeConsumed,
    #[error("pixel_shuffle: {channels} channels not divisible by {factor}^2")]
    IndivisibleChannels { channels: usize, factor: usize },
    #[error("unknown tensor handle")]
    UnknownVar,
}

fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape {
        op,
        detail: detail.into(),
    }
}

/// A dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn scalar(x: T) -> Self {
        Self {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a node on a [`Tape`]; its index is the node's position in the recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalarOp<T> {
    Add(T),
    Mul(T),
    /// `c - x`
    SubFrom(T),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    AbsMean,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Fc { x: Var, w: Var, b: Var },
    Conv3x3 { x: Var, k: Var, b: Var },
    DepthwiseValid { x: Var, kernel: Arc<[T]>, ks: usize },
    PixelShuffle { x: Var, s: usize },
    Silu { x: Var },
    Sigmoid { x: Var },
    Clamp01 { x: Var },
    Binary { a: Var, b: Var, op: BinaryOp },
    Scalar { x: Var, op: ScalarOp<T> },
    Reduce { x: Var, op: Reduction },
    Reshape { x: Var },
    Crop { x: Var, top: usize, left: usize },
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Vec<T> {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            Some(None) => vec![T::zero(); self.shapes[v.0].iter().product()],
            None => Vec::new(),
        }
    }

    /// Moves the gradient out without cloning.
    pub fn take(&mut self, v: Var) -> Vec<T> {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => vec![T::zero(); self.shapes.get(v.0).map_or(0, |s| s.iter().product())],
        }
    }
}

/// Single-owner recording of a forward computation.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    /// Clears the tape so it can record a fresh forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> Result<&Node<T>, TensorError> {
        self.nodes.get(v.0).ok_or(TensorError::UnknownVar)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor {
            shape: self.shape(v).to_vec(),
            data: self.value(v).to_vec(),
        }
    }

    fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        value: Vec<T>,
        op: Op<T>,
        requires_grad: bool,
    ) -> Result<Var, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if !value.iter().all(|x| x.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Result<Var, TensorError> {
        self.push("param", t.shape, t.data, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var, TensorError> {
        self.push("constant", t.shape, t.data, Op::Leaf, false)
    }

    /// `y = W·x + b` with `W: [out, in]`, `b: [out]`, and `x` holding `in` values.
    pub fn fc(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (xn, ws, bs) = (
            self.node(x)?.value.len(),
            self.node(w)?.shape.clone(),
            self.node(b)?.shape.clone(),
        );
        if ws.len() != 2 || ws[1] != xn || bs != [ws[0]] {
            return Err(shape_err(
                "fc",
                format!("x has {xn} values, W {ws:?}, b {bs:?}"),
            ));
        }
        let y = kernels::fc_forward(self.value(x), self.value(w), self.value(b));
        let rg = self.grad_of(&[x, w, b]);
        self.push("fc", vec![ws[0]], y, Op::Fc { x, w, b }, rg)
    }

    /// 3×3 convolution (cross-correlation), stride 1, zero padding 1.
    /// `x: [C_in, H, W]`, `k: [C_out, C_in, 3, 3]`, `b: [C_out]`.
    pub fn conv3x3(&mut self, x: Var, k: Var, b: Var) -> Result<Var, TensorError> {
        let (xs, ks, bs) = (
            self.node(x)?.shape.clone(),
            self.node(k)?.shape.clone(),
            self.node(b)?.shape.clone(),
        );
        if xs.len() != 3
            || ks.len() != 4
            || ks[1] != xs[0]
            || ks[2] != 3
            || ks[3] != 3
            || bs != [ks[0]]
        {
            return Err(shape_err("conv3x3", format!("x {xs:?}, K {ks:?}, b {bs:?}")));
        }
        let y = kernels::conv3x3_forward(
            self.value(x),
            self.value(k),
            self.value(b),
            xs[0],
            xs[1],
            xs[2],
        );
        let rg = self.grad_of(&[x, k, b]);
        self.push("conv3x3", vec![ks[0], xs[1], xs[2]], y, Op::Conv3x3 { x, k, b }, rg)
    }

    /// Per-channel valid cross-correlation with a fixed square kernel (no gradient to the kernel).
    pub fn depthwise_valid(
        &mut self,
        x: Var,
        kernel: Arc<[T]>,
        ks: usize,
    ) -> Result<Var, TensorError> {
        let xs = self.node(x)?.shape.clone();
        if xs.len() != 3 || kernel.len() != ks * ks || xs[1] < ks || xs[2] < ks || ks == 0 {
            return Err(shape_err(
                "depthwise_valid",
                format!("x {xs:?}, kernel {ks}x{ks} ({} taps)", kernel.len()),
            ));
        }
        let y = kernels::depthwise_valid_forward(self.value(x), &kernel, ks, xs[0], xs[1], xs[2]);
        let rg = self.grad_of(&[x]);
        let shape = vec![xs[0], xs[1] - ks + 1, xs[2] - ks + 1];
        self.push("depthwise_valid", shape, y, Op::DepthwiseValid { x, kernel, ks }, rg)
    }

    /// `[C·s², H, W] → [C, s·H, s·W]`.
    pub fn pixel_shuffle(&mut self, x: Var, s: usize) -> Result<Var, TensorError> {
        let xs = self.node(x)?.shape.clone();
        if xs.len() != 3 || s == 0 {
            return Err(shape_err("pixel_shuffle", format!("x {xs:?}, factor {s}")));
        }
        if xs[0] % (s * s) != 0 {
            return Err(TensorError::IndivisibleChannels {
                channels: xs[0],
                factor: s,
            });
        }
        let y = kernels::pixel_shuffle(self.value(x), xs[0], xs[1], xs[2], s);
        let rg = self.grad_of(&[x]);
        let shape = vec![xs[0] / (s * s), xs[1] * s, xs[2] * s];
        self.push("pixel_shuffle", shape, y, Op::PixelShuffle { x, s }, rg)
    }

    /// `x·σ(x)`
    pub fn silu(&mut self, x: Var) -> Result<Var, TensorError> {
        let y = self
            .value(x)
            .iter()
            .map(|&v| v * kernels::sigmoid(v))
            .collect();
        let shape = self.node(x)?.shape.clone();
        let rg = self.grad_of(&[x]);
        self.push("silu", shape, y, Op::Silu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let y = self.value(x).iter().map(|&v| kernels::sigmoid(v)).collect();
        let shape = self.node(x)?.shape.clone();
        let rg = self.grad_of(&[x]);
        self.push("sigmoid", shape, y, Op::Sigmoid { x }, rg)
    }

    /// Clamp to `[0, 1]`; gradient passes only where the input is strictly inside.
    pub fn clamp01(&mut self, x: Var) -> Result<Var, TensorError> {
        let y = self
            .value(x)
            .iter()
            .map(|&v| v.max(T::zero()).min(T::one()))
            .collect();
        let shape = self.node(x)?.shape.clone();
        let rg = self.grad_of(&[x]);
        self.push("clamp01", shape, y, Op::Clamp01 { x }, rg)
    }

    /// Elementwise binary op on equal shapes; a one-element operand broadcasts.
    pub fn binary(&mut self, a: Var, b: Var, op: BinaryOp) -> Result<Var, TensorError> {
        let (sa, sb) = (self.node(a)?.shape.clone(), self.node(b)?.shape.clone());
        let (na, nb) = (self.value(a).len(), self.value(b).len());
        let shape = if sa == sb || nb == 1 {
            sa
        } else if na == 1 {
            sb
        } else {
            return Err(shape_err("elementwise", format!("{sa:?} vs {sb:?}")));
        };
        let n = na.max(nb);
        let av = self.value(a);
        let bv = self.value(b);
        let at = |i: usize| if na == 1 { av[0] } else { av[i] };
        let bt = |i: usize| if nb == 1 { bv[0] } else { bv[i] };
        let y: Vec<T> = match op {
            BinaryOp::Add => (0..n).map(|i| at(i) + bt(i)).collect(),
            BinaryOp::Sub => (0..n).map(|i| at(i) - bt(i)).collect(),
            BinaryOp::Mul => (0..n).map(|i| at(i) * bt(i)).collect(),
            BinaryOp::Div => {
                let eps = T::from_f64(DIV_EPSILON);
                if bv.iter().any(|d| d.abs() <= eps) {
                    return Err(TensorError::DivisorTooSmall);
                }
                (0..n).map(|i| at(i) / bt(i)).collect()
            }
        };
        let rg = self.grad_of(&[a, b]);
        self.push("elementwise", shape, y, Op::Binary { a, b, op }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, BinaryOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, BinaryOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, BinaryOp::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, BinaryOp::Div)
    }

    fn scalar_op(&mut self, x: Var, op: ScalarOp<T>) -> Result<Var, TensorError> {
        let y = self
            .value(x)
            .iter()
            .map(|&v| match op {
                ScalarOp::Add(c) => v + c,
                ScalarOp::Mul(c) => v * c,
                ScalarOp::SubFrom(c) => c - v,
            })
            .collect();
        let shape = self.node(x)?.shape.clone();
        let rg = self.grad_of(&[x]);
        self.push("scalar", shape, y, Op::Scalar { x, op }, rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var, TensorError> {
        self.scalar_op(x, ScalarOp::Add(c))
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Result<Var, TensorError> {
        self.scalar_op(x, ScalarOp::Mul(c))
    }

    /// `c - x`
    pub fn sub_from_scalar(&mut self, c: T, x: Var) -> Result<Var, TensorError> {
        self.scalar_op(x, ScalarOp::SubFrom(c))
    }

    pub fn reduce(&mut self, x: Var, op: Reduction) -> Result<Var, TensorError> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(shape_err("reduce", "empty tensor"));
        }
        let n = v.len() as f64;
        let total = |f: fn(T) -> T| v.iter().map(|&a| f(a).to_f64().unwrap_or(f64::NAN)).sum::<f64>();
        let y = T::from_f64(match op {
            Reduction::Sum => total(|a| a),
            Reduction::Mean => total(|a| a) / n,
            Reduction::AbsMean => total(|a| a.abs()) / n,
        });
        let rg = self.grad_of(&[x]);
        self.push("reduce", vec![], vec![y], Op::Reduce { x, op }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        self.reduce(x, Reduction::Sum)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        self.reduce(x, Reduction::Mean)
    }

    /// `mean(|x|)`; the subgradient at zero is 0.
    pub fn abs_mean(&mut self, x: Var) -> Result<Var, TensorError> {
        self.reduce(x, Reduction::AbsMean)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        if shape.iter().product::<usize>() != n {
            return Err(shape_err("reshape", format!("{n} values into {shape:?}")));
        }
        let y = self.value(x).to_vec();
        let rg = self.grad_of(&[x]);
        self.push("reshape", shape, y, Op::Reshape { x }, rg)
    }

    /// Spatial crop of a `[C, H, W]` tensor to `[C, h, w]` starting at `(top, left)`.
    pub fn crop(
        &mut self,
        x: Var,
        top: usize,
        left: usize,
        h: usize,
        w: usize,
    ) -> Result<Var, TensorError> {
        let xs = self.node(x)?.shape.clone();
        if xs.len() != 3 || top + h > xs[1] || left + w > xs[2] {
            return Err(shape_err(
                "crop",
                format!("{h}x{w} at ({top},{left}) from {xs:?}"),
            ));
        }
        let v = self.value(x);
        let mut y = Vec::with_capacity(xs[0] * h * w);
        for c in 0..xs[0] {
            for r in top..top + h {
                let off = c * xs[1] * xs[2] + r * xs[2] + left;
                y.extend_from_slice(&v[off..off + w]);
            }
        }
        let rg = self.grad_of(&[x]);
        self.push("crop", vec![xs[0], h, w], y, Op::Crop { x, top, left }, rg)
    }

    /// Reverse pass from the scalar `loss`. The tape is cleared afterwards; a
    /// second call without recording a new forward pass is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let ls = &self.node(loss)?.shape;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NotScalar(ls.clone()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.shape.clone()).collect();
        // keep gradients only for trainable leaves
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                *g = None;
            }
        }
        self.nodes.clear();
        self.consumed = true;
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Fc { x, w, b } => {
                let (dx, dw, db) = kernels::fc_backward(self.value(*x), self.value(*w), g);
                accumulate(grads, *x, dx, wants(x));
                accumulate(grads, *w, dw, wants(w));
                accumulate(grads, *b, db, wants(b));
            }
            Op::Conv3x3 { x, k, b } => {
                let xs = &self.nodes[x.0].shape;
                let (dx, dk, db) = kernels::conv3x3_backward(
                    self.value(*x),
                    self.value(*k),
                    g,
                    xs[0],
                    xs[1],
                    xs[2],
                    wants(x),
                );
                accumulate(grads, *x, dx, wants(x));
                accumulate(grads, *k, dk, wants(k));
                accumulate(grads, *b, db, wants(b));
            }
            Op::DepthwiseValid { x, kernel, ks } => {
                let xs = &self.nodes[x.0].shape;
                let dx = kernels::depthwise_valid_backward(g, kernel, *ks, xs[0], xs[1], xs[2]);
                accumulate(grads, *x, dx, true);
            }
            Op::PixelShuffle { x, s } => {
                let ys = &node.shape;
                let dx = kernels::pixel_unshuffle(g, ys[0], ys[1], ys[2], *s);
                accumulate(grads, *x, dx, true);
            }
            Op::Silu { x } => {
                let dx = self
                    .value(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| {
                        let s = kernels::sigmoid(v);
                        gv * s * (T::one() + v * (T::one() - s))
                    })
                    .collect();
                accumulate(grads, *x, dx, true);
            }
            Op::Sigmoid { x } => {
                let dx = node
                    .value
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| gv * y * (T::one() - y))
                    .collect();
                accumulate(grads, *x, dx, true);
            }
            Op::Clamp01 { x } => {
                let dx = self
                    .value(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| {
                        if v > T::zero() && v < T::one() {
                            gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                accumulate(grads, *x, dx, true);
            }
            Op::Binary { a, b, op } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (na, nb) = (av.len(), bv.len());
                let at = |i: usize| if na == 1 { av[0] } else { av[i] };
                let bt = |i: usize| if nb == 1 { bv[0] } else { bv[i] };
                let (da, db): (Vec<T>, Vec<T>) = match op {
                    BinaryOp::Add => (g.to_vec(), g.to_vec()),
                    BinaryOp::Sub => (g.to_vec(), g.iter().map(|&v| -v).collect()),
                    BinaryOp::Mul => (
                        g.iter().enumerate().map(|(i, &v)| v * bt(i)).collect(),
                        g.iter().enumerate().map(|(i, &v)| v * at(i)).collect(),
                    ),
                    BinaryOp::Div => (
                        g.iter().enumerate().map(|(i, &v)| v / bt(i)).collect(),
                        g.iter()
                            .enumerate()
                            .map(|(i, &v)| -v * at(i) / (bt(i) * bt(i)))
                            .collect(),
                    ),
                };
                accumulate(grads, *a, fold_broadcast(da, na), wants(a));
                accumulate(grads, *b, fold_broadcast(db, nb), wants(b));
            }
            Op::Scalar { x, op } => {
                let dx = match op {
                    ScalarOp::Add(_) => g.to_vec(),
                    ScalarOp::Mul(c) => g.iter().map(|&v| v * *c).collect(),
                    ScalarOp::SubFrom(_) => g.iter().map(|&v| -v).collect(),
                };
                accumulate(grads, *x, dx, true);
            }
            Op::Reduce { x, op } => {
                let xv = self.value(*x);
                let n = T::from_f64(xv.len() as f64);
                let g0 = g[0];
                let dx = match op {
                    Reduction::Sum => vec![g0; xv.len()],
                    Reduction::Mean => vec![g0 / n; xv.len()],
                    Reduction::AbsMean => xv
                        .iter()
                        .map(|&v| {
                            if v > T::zero() {
                                g0 / n
                            } else if v < T::zero() {
                                -g0 / n
                            } else {
                                T::zero()
                            }
                        })
                        .collect(),
                };
                accumulate(grads, *x, dx, true);
            }
            Op::Reshape { x } => accumulate(grads, *x, g.to_vec(), true),
            Op::Crop { x, top, left } => {
                let xs = &self.nodes[x.0].shape;
                let (c, h, w) = (node.shape[0], node.shape[1], node.shape[2]);
                let mut dx = vec![T::zero(); xs.iter().product()];
                for ch in 0..c {
                    for r in 0..h {
                        let off = ch * xs[1] * xs[2] + (r + top) * xs[2] + left;
                        dx[off..off + w].copy_from_slice(&g[(ch * h + r) * w..][..w]);
                    }
                }
                accumulate(grads, *x, dx, true);
            }
        }
    }
}

fn fold_broadcast<T: Real>(d: Vec<T>, n: usize) -> Vec<T> {
    if n == 1 && d.len() != 1 {
        vec![d.into_iter().sum()]
    } else {
        d
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>, wanted: bool) {
    if !wanted {
        return;
    }
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(d).for_each(|(e, x)| *e = *e + x),
        slot @ None => *slot = Some(d),
    }
}

#[cfg(test)]
mod tests;
