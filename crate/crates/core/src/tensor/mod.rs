//! Rank-4 tensors and a tape-based reverse-mode differentiation engine.
//!
//! Only the handful of operations the filter networks need are provided:
//! convolution, transposed convolution, 2x2 max-pooling, PReLU, channel
//! concatenation, elementwise addition and the mean squared error loss.
//! Values are laid out as `(batch, channels, height, width)` in row-major
//! order.

mod gradcheck;
mod kernels;
mod tape;

pub use gradcheck::{check_all_ops, finite_difference, uniform, Coords, GradCheckEntry, GradCheckReport, FD_STEP};
pub use tape::{Tape, Var};

use std::fmt;

use num_traits::Float;
use thiserror::Error;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch on {axis} axis (expected {expected}, got {got})")]
    Dimension {
        op: &'static str,
        axis: Axis,
        expected: usize,
        got: usize,
    },
    #[error("{op}: {len} values do not fill shape {shape}")]
    DataLength {
        op: &'static str,
        shape: Shape,
        len: usize,
    },
    #[error("{op}: invalid argument: {reason}")]
    Argument { op: &'static str, reason: String },
    #[error("variable #{0} is not recorded on this tape")]
    NotOnTape(usize),
    #[error("backward requires a scalar loss, got shape {0}")]
    NotScalar(Shape),
    #[error("parameter slot {slot} out of range ({len} parameters supplied)")]
    ParamSlot { slot: usize, len: usize },
}

/// Named tensor axis, used in dimension errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Channel,
    Height,
    Width,
    KernelHeight,
    KernelWidth,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::Batch => "batch",
            Axis::Channel => "channel",
            Axis::Height => "height",
            Axis::Width => "width",
            Axis::KernelHeight => "kernel height",
            Axis::KernelWidth => "kernel width",
        };
        f.write_str(s)
    }
}

/// Element type of a tensor. Implemented for `f32` (training) and `f64`
/// (gradient checks).
pub trait Scalar: Float + Default + fmt::Debug + Send + Sync + 'static {
    const TAG: ScalarTag;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C = alpha * A * B + beta * C` on strided matrices.
    ///
    /// # Safety
    /// The pointers and strides must describe in-bounds matrices of the
    /// stated sizes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

/// On-disk tag of a scalar type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarTag {
    F32 = 1,
    F64 = 2,
}

impl ScalarTag {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(ScalarTag::F32),
            2 => Some(ScalarTag::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            ScalarTag::F32 => 4,
            ScalarTag::F64 => 8,
        }
    }
}

impl Scalar for f32 {
    const TAG: ScalarTag = ScalarTag::F32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const TAG: ScalarTag = ScalarTag::F64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// `(batch, channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one `(h, w)` plane.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements in one batch item.
    pub fn item(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense rank-4 tensor with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Shape,
    data: Vec<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: impl Into<Shape>, value: S) -> Self {
        let shape = shape.into();
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<S>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                op: "from_vec",
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn scalar(value: S) -> Self {
        Self::full(Shape::scalar(), value)
    }

    /// Marks the tensor as a differentiation target.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [S]> {
        self.grad.as_deref_mut()
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[S]) {
        assert_eq!(delta.len(), self.data.len(), "gradient length mismatch");
        let len = self.data.len();
        let grad = self.grad.get_or_insert_with(|| vec![S::zero(); len]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g = *g + *d;
        }
    }

    /// Drops the gradient buffer.
    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Overwrites the gradient buffer with zeros, keeping it allocated.
    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = S::zero());
        }
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> S {
        self.data[self.shape.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: S) {
        let o = self.shape.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// Copy of channels `start..end` of every batch item.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Self, TensorError> {
        if start > end || end > self.shape.c {
            return Err(TensorError::Dimension {
                op: "slice_channels",
                axis: Axis::Channel,
                expected: self.shape.c,
                got: end,
            });
        }
        let shape = Shape::new(self.shape.n, end - start, self.shape.h, self.shape.w);
        let plane = self.shape.plane();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..self.shape.n {
            let base = n * self.shape.item();
            data.extend_from_slice(&self.data[base + start * plane..base + end * plane]);
        }
        Tensor::from_vec(shape, data)
    }

    /// Converts the element type.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| T::from_f64(v.as_f64())).collect()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// A trainable tensor with a unique name such as `"res.conv1.weight"`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<S = f32> {
    pub name: String,
    pub tensor: Tensor<S>,
}

impl<S: Scalar> ParamTensor<S> {
    pub fn new(name: impl Into<String>, mut tensor: Tensor<S>) -> Self {
        tensor.set_requires_grad(true);
        ParamTensor {
            name: name.into(),
            tensor,
        }
    }

    pub fn shape(&self) -> Shape {
        self.tensor.shape()
    }

    pub fn numel(&self) -> usize {
        self.tensor.len()
    }

    pub fn cast<T: Scalar>(&self) -> ParamTensor<T> {
        ParamTensor {
            name: self.name.clone(),
            tensor: self.tensor.cast(),
        }
    }
}
