//! Dense rank-4 tensors in batch, channel, row, column order.
//!
//! Columns are the fastest-moving axis, then rows, then channels, then the
//! batch. Every operation in the crate reads and writes this layout directly.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Scalar type a network runs in.
///
/// Runtime paths use `f32`, verification paths (gradient checks, oracles)
/// use `f64`. A model, its tape and its optimizer state are always
/// instantiated at one precision; there is no implicit mixing.
pub trait Real: Float + FromPrimitive + Default + Debug + Sum + Send + Sync + 'static {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape,
    data: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor4 {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor4 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::config(format!(
                "empty tensor shape {:?}",
                shape.dims()
            )));
        }
        if data.len() != shape.len() {
            return Err(Error::shape("from_vec", &shape.dims(), &[data.len()]));
        }
        Ok(Tensor4 { shape, data })
    }

    /// Channel vector (bias, norm scale) stored as a `(1, len, 1, 1)` tensor.
    pub fn vector(data: Vec<T>) -> Self {
        Tensor4 {
            shape: Shape::new(1, data.len(), 1, 1),
            data,
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for i in 0..shape.n {
            for j in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(i, j, y, x));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape)
    }

    pub fn ones_like(&self) -> Self {
        Self::full(self.shape, T::one())
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> [usize; 4] {
        self.shape.dims()
    }

    pub fn n(&self) -> usize {
        self.shape.n
    }
    pub fn c(&self) -> usize {
        self.shape.c
    }
    pub fn h(&self) -> usize {
        self.shape.h
    }
    pub fn w(&self) -> usize {
        self.shape.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn flat_index(&self, i: usize, j: usize, y: usize, x: usize) -> Result<usize> {
        let s = self.shape;
        for (axis, index, len) in [
            ("batch", i, s.n),
            ("channel", j, s.c),
            ("row", y, s.h),
            ("column", x, s.w),
        ] {
            if index >= len {
                return Err(Error::Bounds { axis, index, len });
            }
        }
        Ok(((i * s.c + j) * s.h + y) * s.w + x)
    }

    #[inline]
    pub(crate) fn idx(&self, i: usize, j: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((i * s.c + j) * s.h + y) * s.w + x
    }

    pub fn get(&self, i: usize, j: usize, y: usize, x: usize) -> Result<T> {
        Ok(self.data[self.flat_index(i, j, y, x)?])
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, y: usize, x: usize) -> T {
        self.data[self.idx(i, j, y, x)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, y: usize, x: usize, v: T) {
        let k = self.idx(i, j, y, x);
        self.data[k] = v;
    }

    /// Contiguous `h * w` plane for one (batch, channel) pair.
    pub fn plane(&self, i: usize, j: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (i * self.shape.c + j) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, i: usize, j: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (i * self.shape.c + j) * p;
        &mut self.data[start..start + p]
    }

    pub fn elementwise(&self, other: &Self, op: BinaryOp) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("elementwise", &self.dims(), &other.dims()));
        }
        let f: fn(T, T) -> T = match op {
            BinaryOp::Add => |a, b| a + b,
            BinaryOp::Sub => |a, b| a - b,
            BinaryOp::Mul => |a, b| a * b,
        };
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor4 {
            shape: self.shape,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, BinaryOp::Mul)
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().to_f64_lossy())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / self.data.len() as f64
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| U::lit(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(Error::shape("reshape", &self.dims(), &shape.dims()));
        }
        Ok(Tensor4 {
            shape,
            data: self.data,
        })
    }

    /// Batch entry `i` as a standalone tensor with `n = 1`.
    pub fn batch_item(&self, i: usize) -> Self {
        let per = self.shape.c * self.shape.plane();
        Tensor4 {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[i * per..(i + 1) * per].to_vec(),
        }
    }

    /// Stacks same-shaped tensors along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::config("stack of zero tensors"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.len() * items.len());
        let mut n = 0;
        for t in items {
            if (t.c(), t.h(), t.w()) != (s.c, s.h, s.w) {
                return Err(Error::shape("stack", &s.dims(), &t.dims()));
            }
            n += t.n();
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor4 {
            shape: Shape::new(n, s.c, s.h, s.w),
            data,
        })
    }
}
