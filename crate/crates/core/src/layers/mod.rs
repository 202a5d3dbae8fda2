//! Differentiable layers with hand-written reverse-mode backward passes.
//!
//! Every layer caches what its backward pass needs during `forward` and
//! consumes that cache in `backward`. Calling `backward` twice without an
//! intervening `forward` is a [`Error::State`]. Weight gradients are
//! *accumulated*; the optimizer zeroes them after each step.

mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod flatten;
mod loss;
mod pool;
mod relu;

pub use batchnorm::BatchNorm;
pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use flatten::Flatten;
pub use loss::{argmax_rows, softmax_cross_entropy, LossValue};
pub use pool::MaxPool2x2;
pub use relu::Relu;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Whether stochastic and batch-statistic layers run in training or inference form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerKind {
    Conv2d,
    Relu,
    MaxPool2x2,
    Dropout,
    BatchNorm,
    Flatten,
    Dense,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2x2 => "maxpool2x2",
            LayerKind::Dropout => "dropout",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
        }
    }
}

/// A trainable tensor and its accumulated gradient. Both always share a shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T = f32> {
    value: Tensor<T>,
    grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros_like(&value);
        Param { value, grad }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    /// Mutable access to value and gradient together.
    pub fn parts_mut(&mut self) -> (&mut Tensor<T>, &mut Tensor<T>) {
        (&mut self.value, &mut self.grad)
    }

    /// Replaces the value; the new tensor must have the same shape.
    pub fn set_value(&mut self, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.value.shape() {
            return Err(Error::Dimension(format!(
                "parameter shape {:?} cannot take {:?}",
                self.value.shape(),
                value.shape()
            )));
        }
        self.value = value;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Kaiming-normal initialization, `std = sqrt(2 / fan_in)`.
///
/// Draws happen in `f64` so `f32` and `f64` instantiations built from the
/// same generator state agree up to rounding.
pub(crate) fn kaiming_normal<T: Scalar, R: Rng + ?Sized>(
    dims: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::Parameter(e.to_string()))?;
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| T::of(normal.sample(rng))).collect();
    Tensor::new(dims.to_vec(), data)
}

/// One node of a network.
#[derive(Debug, Clone)]
pub enum Layer<T = f32> {
    Conv2d(Conv2d<T>),
    Relu(Relu<T>),
    MaxPool2x2(MaxPool2x2),
    Dropout(Dropout<T>),
    BatchNorm(BatchNorm<T>),
    Flatten(Flatten),
    Dense(Dense<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::MaxPool2x2(_) => LayerKind::MaxPool2x2,
            Layer::Dropout(_) => LayerKind::Dropout,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Flatten(_) => LayerKind::Flatten,
            Layer::Dense(_) => LayerKind::Dense,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::Relu(l) => l.forward(x),
            Layer::MaxPool2x2(l) => l.forward(x),
            Layer::Dropout(l) => l.forward(x, mode),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Flatten(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x),
        }
    }

    /// Gradient with respect to the layer input; accumulates weight gradients.
    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.backward(upstream),
            Layer::Relu(l) => l.backward(upstream),
            Layer::MaxPool2x2(l) => l.backward(upstream),
            Layer::Dropout(l) => l.backward(upstream),
            Layer::BatchNorm(l) => l.backward(upstream),
            Layer::Flatten(l) => l.backward(upstream),
            Layer::Dense(l) => l.backward(upstream),
        }
    }

    /// Output dimensions for a given input, without running the layer.
    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(l) => l.output_dims(input),
            Layer::MaxPool2x2(_) => MaxPool2x2::output_dims(input),
            Layer::Flatten(_) => Flatten::output_dims(input),
            Layer::Dense(l) => l.output_dims(input),
            Layer::Relu(_) | Layer::Dropout(_) | Layer::BatchNorm(_) => Ok(input.to_vec()),
        }
    }

    /// Trainable parameters, in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        match self {
            Layer::Conv2d(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::Dense(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::BatchNorm(l) => vec![("gamma", &l.gamma), ("beta", &l.beta)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        match self {
            Layer::Conv2d(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::Dense(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::BatchNorm(l) => vec![("gamma", &mut l.gamma), ("beta", &mut l.beta)],
            _ => Vec::new(),
        }
    }

    /// Non-trainable persistent state (batchnorm running statistics).
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::BatchNorm(l) => vec![
                ("running_mean", &l.running_mean),
                ("running_var", &l.running_var),
            ],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::BatchNorm(l) => vec![
                ("running_mean", &mut l.running_mean),
                ("running_var", &mut l.running_var),
            ],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Human-readable configuration, e.g. `[3x3, 16], padding 1`.
    pub fn describe(&self) -> String {
        match self {
            Layer::Conv2d(l) => format!(
                "[{k}x{k}, {}], padding {}",
                l.out_channels(),
                l.padding(),
                k = l.kernel()
            ),
            Layer::Relu(_) => "relu".into(),
            Layer::MaxPool2x2(_) => "2x2 max, stride 2".into(),
            Layer::Dropout(l) => format!("p = {}", l.p()),
            Layer::BatchNorm(l) => format!("{} channels", l.features()),
            Layer::Flatten(_) => "to vector".into(),
            Layer::Dense(l) => format!("{} -> {}", l.in_features(), l.out_features()),
        }
    }
}

/// Takes a forward cache, failing with a state error when it is missing.
pub(crate) fn take_cache<C>(cache: &mut Option<C>, layer: &str) -> Result<C> {
    cache
        .take()
        .ok_or_else(|| Error::State(format!("{layer}: backward called without a fresh forward")))
}

pub(crate) fn check_upstream<T: Scalar>(
    upstream: &Tensor<T>,
    expected: &[usize],
    layer: &str,
) -> Result<()> {
    if upstream.dims() != expected {
        return Err(Error::Dimension(format!(
            "{layer}: upstream gradient {:?} does not match output {:?}",
            upstream.dims(),
            expected
        )));
    }
    Ok(())
}
