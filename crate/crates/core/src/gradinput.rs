//! The image-gradient input transform.
//!
//! Each pixel of a copy of the image is replaced by `dx + dy`, where `dx`
//! and `dy` are finite-difference derivatives along width and height.
//! Interior pixels use central differences `(I[i+1] - I[i-1]) / 2`; the
//! first and last pixel of every row/column use one-sided differences
//! `I[1] - I[0]` and `I[n-1] - I[n-2]`. Channels are independent.
//!
//! The transform has no parameters and no backward pass; its outputs are
//! leaves of the computation graph.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A `[b,c,h,w]` tensor holding `dx + dy` per pixel and channel.
pub type GradientImage<T = f32> = Tensor<T>;

fn validate(dims: &[usize]) -> Result<(usize, usize, usize)> {
    let [b, c, h, w] = *dims else {
        return Err(Error::Shape(format!(
            "image gradients need a [b,c,h,w] tensor, got {dims:?}"
        )));
    };
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!(
            "image gradients need at least 2x2 pixels, got {h}x{w}"
        )));
    }
    Ok((b * c, h, w))
}

/// Derivative of a strided 1-D run of `n >= 2` samples at position `i`.
#[inline]
fn diff<T: Scalar>(line: impl Fn(usize) -> T, i: usize, n: usize) -> T {
    if i == 0 {
        line(1) - line(0)
    } else if i == n - 1 {
        line(n - 1) - line(n - 2)
    } else {
        (line(i + 1) - line(i - 1)) / T::of(2.0)
    }
}

/// Horizontal (`dx`) and vertical (`dy`) derivatives of every channel.
pub fn spatial_gradients<T: Scalar>(image: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (planes, h, w) = validate(image.dims())?;
    let src = image.data();
    let mut dx = Vec::with_capacity(src.len());
    let mut dy = Vec::with_capacity(src.len());
    for p in 0..planes {
        let plane = &src[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dx.push(diff(|i| plane[y * w + i], x, w));
                dy.push(diff(|i| plane[i * w + x], y, h));
            }
        }
    }
    let dims = image.dims().to_vec();
    Ok((Tensor::new(dims.clone(), dx)?, Tensor::new(dims, dy)?))
}

/// Replaces every pixel by `combine(dx, dy)`.
pub fn gradient_transform_with<T: Scalar>(
    image: &Tensor<T>,
    combine: impl Fn(T, T) -> T,
) -> Result<GradientImage<T>> {
    let (dx, dy) = spatial_gradients(image)?;
    let data = dx
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&a, &b)| combine(a, b))
        .collect();
    Tensor::new(image.dims().to_vec(), data)
}

/// Replaces every pixel by `dx + dy`. The source image is untouched.
pub fn gradient_transform<T: Scalar>(image: &Tensor<T>) -> Result<GradientImage<T>> {
    gradient_transform_with(image, |dx, dy| dx + dy)
}
