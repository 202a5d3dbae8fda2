//! Dense row-major tensors.
//!
//! [`Tensor`] is the single value type used for images, feature maps,
//! weights and gradients. Training runs in `f32`; the same code is
//! instantiated at `f64` for finite-difference gradient checks.
//!
//! There is no broadcasting. Elementwise operations require identical
//! shapes and report a [`Error::Dimension`] otherwise.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, NumAssign};

use crate::error::{Error, Result};
use crate::linalg;

/// Floating-point element type of a [`Tensor`].
pub trait Scalar:
    Float + NumAssign + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    fn of(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Tensor dimensions. Images use `(batch, channels, height, width)`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::Shape("shape must have at least one dimension".into()));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {dims:?}")));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Unpacks a rank-4 shape as `(b, c, h, w)`.
    pub fn as4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.0[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::Shape(format!("expected rank-4 shape, got {self:?}"))),
        }
    }

    /// Unpacks a rank-2 shape as `(rows, cols)`.
    pub fn as2(&self) -> Result<(usize, usize)> {
        match self.0[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!("expected rank-2 shape, got {self:?}"))),
        }
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Border handling for [`pad2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Replicate,
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {} elements, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![T::zero(); other.data.len()],
        }
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros([n, n])?;
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        Ok(t)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    /// Converts the element type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        expect_same_shape(self, other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Element at a rank-4 index `(b, c, h, w)`.
    pub fn at4(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        let d = self.dims();
        self.data[((b * d[1] + c) * d[2] + h) * d[3] + w]
    }

    /// Rows `start..end` along the leading (batch) axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Result<Self> {
        let n = self.dims()[0];
        if start >= end || end > n {
            return Err(Error::Dimension(format!(
                "batch slice {start}..{end} out of range for leading dim {n}"
            )));
        }
        let row = self.numel() / n;
        let mut dims = self.dims().to_vec();
        dims[0] = end - start;
        Tensor::new(dims, self.data[start * row..end * row].to_vec())
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        let head = &self.data[..self.data.len().min(SHOWN)];
        if self.data.len() > SHOWN {
            write!(f, "{head:?}..")
        } else {
            write!(f, "{head:?}")
        }
    }
}

fn expect_same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape, b.shape
        )));
    }
    Ok(())
}

/// Matrix product of `[m,k]` and `[k,n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.shape.as2()?;
    let (k2, n) = b.shape.as2()?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul: inner dimensions {k} and {k2} differ"
        )));
    }
    let mut out = Tensor::zeros([m, n])?;
    linalg::gemm_nn(m, k, n, &a.data, &b.data, &mut out.data);
    Ok(out)
}

pub fn add_elementwise<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_same_shape(a, b, "add_elementwise")?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(),
    })
}

pub fn sub_elementwise<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_same_shape(a, b, "sub_elementwise")?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x - y).collect(),
    })
}

/// Pads the two spatial axes of a `[b,c,h,w]` tensor by `amount` on every side.
pub fn pad2d<T: Scalar>(x: &Tensor<T>, amount: usize, mode: PadMode) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.shape.as4()?;
    if amount == 0 {
        return Ok(x.clone());
    }
    let (ph, pw) = (h + 2 * amount, w + 2 * amount);
    let mut out = Tensor::zeros([b, c, ph, pw])?;
    for plane in 0..b * c {
        let src = &x.data[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data[plane * ph * pw..(plane + 1) * ph * pw];
        for y in 0..ph {
            let sy = match mode {
                PadMode::Zero if y < amount || y >= h + amount => continue,
                PadMode::Zero => y - amount,
                PadMode::Replicate => y.saturating_sub(amount).min(h - 1),
            };
            for xx in 0..pw {
                let sx = match mode {
                    PadMode::Zero if xx < amount || xx >= w + amount => continue,
                    PadMode::Zero => xx - amount,
                    PadMode::Replicate => xx.saturating_sub(amount).min(w - 1),
                };
                dst[y * pw + xx] = src[sy * w + sx];
            }
        }
    }
    Ok(out)
}

/// Removes `amount` pixels from every spatial border; inverse of [`pad2d`].
pub fn crop2d<T: Scalar>(x: &Tensor<T>, amount: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.shape.as4()?;
    if 2 * amount >= h || 2 * amount >= w {
        return Err(Error::Shape(format!(
            "cannot crop {amount} from each side of {h}x{w}"
        )));
    }
    let (oh, ow) = (h - 2 * amount, w - 2 * amount);
    let mut data = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        for y in 0..oh {
            let start = plane * h * w + (y + amount) * w + amount;
            data.extend_from_slice(&x.data[start..start + ow]);
        }
    }
    Tensor::new([b, c, oh, ow], data)
}

/// Stacks two tensors along the batch axis. Trailing dims must match.
pub fn concat_batch<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.dims()[1..] != b.dims()[1..] {
        return Err(Error::Dimension(format!(
            "concat_batch: trailing dims of {:?} and {:?} differ",
            a.shape, b.shape
        )));
    }
    let mut dims = a.dims().to_vec();
    dims[0] += b.dims()[0];
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::new(dims, data)
}

/// Splits along the batch axis at row `at`.
pub fn split_batch<T: Scalar>(x: &Tensor<T>, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let n = x.dims()[0];
    Ok((x.slice_batch(0, at)?, x.slice_batch(at, n)?))
}
