//! Batch normalization over `[b,c,h,w]` (per channel) or `[b,f]` (per feature).
//!
//! Train mode normalizes with the batch mean and *biased* batch variance and
//! folds those into exponential running averages:
//! `running = momentum * running + (1 - momentum) * batch`.
//! Eval mode normalizes with the running statistics.

use super::{check_upstream, take_cache, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct BatchNorm<T = f32> {
    pub(crate) gamma: Param<T>,
    pub(crate) beta: Param<T>,
    pub(crate) running_mean: Tensor<T>,
    pub(crate) running_var: Tensor<T>,
    eps: f64,
    momentum: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    dims: Vec<usize>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// Iteration layout: `outer` blocks of `channels` runs, each `inner` long.
#[derive(Debug, Clone, Copy)]
struct Layout {
    outer: usize,
    channels: usize,
    inner: usize,
}

impl Layout {
    fn count(&self) -> usize {
        self.outer * self.inner
    }

    /// Visits every element index belonging to channel `c`.
    fn each(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        let (channels, inner) = (self.channels, self.inner);
        (0..self.outer).flat_map(move |o| {
            let start = (o * channels + c) * inner;
            start..start + inner
        })
    }
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(features: usize) -> Result<Self> {
        Self::with_config(features, DEFAULT_EPS, DEFAULT_MOMENTUM)
    }

    pub fn with_config(features: usize, eps: f64, momentum: f64) -> Result<Self> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Parameter(format!("batchnorm eps must be positive, got {eps}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Parameter(format!(
                "batchnorm momentum must be in [0, 1), got {momentum}"
            )));
        }
        Ok(BatchNorm {
            gamma: Param::new(Tensor::full([features], T::one())?),
            beta: Param::new(Tensor::zeros([features])?),
            running_mean: Tensor::zeros([features])?,
            running_var: Tensor::full([features], T::one())?,
            eps,
            momentum,
            cache: None,
        })
    }

    pub fn features(&self) -> usize {
        self.gamma.numel()
    }

    pub fn gamma(&self) -> &Param<T> {
        &self.gamma
    }

    pub fn beta(&self) -> &Param<T> {
        &self.beta
    }

    pub fn gamma_mut(&mut self) -> &mut Param<T> {
        &mut self.gamma
    }

    pub fn beta_mut(&mut self) -> &mut Param<T> {
        &mut self.beta
    }

    pub fn running_mean(&self) -> &Tensor<T> {
        &self.running_mean
    }

    pub fn running_var(&self) -> &Tensor<T> {
        &self.running_var
    }

    fn layout(&self, dims: &[usize]) -> Result<Layout> {
        let layout = match *dims {
            [b, c, h, w] => Layout { outer: b, channels: c, inner: h * w },
            [b, f] => Layout { outer: b, channels: f, inner: 1 },
            _ => {
                return Err(Error::Shape(format!(
                    "batchnorm expects [b,c,h,w] or [b,f], got {dims:?}"
                )))
            }
        };
        if layout.channels != self.features() {
            return Err(Error::Dimension(format!(
                "batchnorm has {} channels, input has {}",
                self.features(),
                layout.channels
            )));
        }
        Ok(layout)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let layout = self.layout(x.dims())?;
        if mode == Mode::Train && layout.outer < 2 {
            return Err(Error::Parameter(format!(
                "batchnorm needs a batch of at least 2 in train mode, got {}",
                layout.outer
            )));
        }
        let src = x.data();
        let n = T::of(layout.count() as f64);
        let eps = T::of(self.eps);
        let m = T::of(self.momentum);

        let mut out = vec![T::zero(); x.numel()];
        let mut xhat = vec![T::zero(); x.numel()];
        let mut inv_std = Vec::with_capacity(layout.channels);
        for c in 0..layout.channels {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = layout.each(c).map(|i| src[i]).sum::<T>() / n;
                    let var = layout
                        .each(c)
                        .map(|i| (src[i] - mean) * (src[i] - mean))
                        .sum::<T>()
                        / n;
                    let rm = &mut self.running_mean.data_mut()[c];
                    *rm = m * *rm + (T::one() - m) * mean;
                    let rv = &mut self.running_var.data_mut()[c];
                    *rv = m * *rv + (T::one() - m) * var;
                    (mean, var)
                }
                Mode::Eval => (self.running_mean.data()[c], self.running_var.data()[c]),
            };
            let istd = T::one() / (var + eps).sqrt();
            let (g, b) = (self.gamma.value().data()[c], self.beta.value().data()[c]);
            for i in layout.each(c) {
                let h = (src[i] - mean) * istd;
                xhat[i] = h;
                out[i] = g * h + b;
            }
            inv_std.push(istd);
        }
        self.cache = Some(BnCache {
            dims: x.dims().to_vec(),
            xhat,
            inv_std,
            mode,
        });
        Tensor::new(x.dims().to_vec(), out)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = take_cache(&mut self.cache, "batchnorm")?;
        check_upstream(upstream, &cache.dims, "batchnorm")?;
        let layout = self.layout(&cache.dims)?;
        let dy = upstream.data();
        let n = T::of(layout.count() as f64);

        let mut dx = vec![T::zero(); dy.len()];
        for c in 0..layout.channels {
            let sum_dy = layout.each(c).map(|i| dy[i]).sum::<T>();
            let sum_dy_xhat = layout.each(c).map(|i| dy[i] * cache.xhat[i]).sum::<T>();
            self.gamma.parts_mut().1.data_mut()[c] += sum_dy_xhat;
            self.beta.parts_mut().1.data_mut()[c] += sum_dy;

            let g = self.gamma.value().data()[c];
            let istd = cache.inv_std[c];
            match cache.mode {
                Mode::Train => {
                    // d/dx of (x - mean(x)) / std(x) with batch statistics
                    let k = g * istd / n;
                    for i in layout.each(c) {
                        dx[i] = k * (n * dy[i] - sum_dy - cache.xhat[i] * sum_dy_xhat);
                    }
                }
                Mode::Eval => {
                    for i in layout.each(c) {
                        dx[i] = g * istd * dy[i];
                    }
                }
            }
        }
        Tensor::new(cache.dims, dx)
    }
}
