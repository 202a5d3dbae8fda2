use super::{check_upstream, take_cache};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// `max(0, x)`. The gradient at exactly zero is zero.
#[derive(Debug, Clone, Default)]
pub struct Relu<T = f32> {
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu { input: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.input = Some(x.clone());
        Ok(x.map(|v| if v > T::zero() { v } else { T::zero() }))
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&mut self.input, "relu")?;
        check_upstream(upstream, x.dims(), "relu")?;
        let data = x
            .data()
            .iter()
            .zip(upstream.data())
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect();
        Tensor::new(x.dims().to_vec(), data)
    }
}
