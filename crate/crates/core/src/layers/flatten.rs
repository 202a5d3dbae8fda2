use super::{check_upstream, take_cache};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-major reshape `[b, ...] -> [b, prod(...)]`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input_dims: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Flatten { input_dims: None }
    }

    pub fn output_dims(input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [] => Err(Error::Shape("flatten of a rank-0 tensor".into())),
            [b, rest @ ..] => Ok(vec![*b, rest.iter().product()]),
        }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = Self::output_dims(x.dims())?;
        self.input_dims = Some(x.dims().to_vec());
        x.clone().reshape(out)
    }

    pub fn backward<T: Scalar>(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let dims = take_cache(&mut self.input_dims, "flatten")?;
        check_upstream(upstream, &Self::output_dims(&dims)?, "flatten")?;
        upstream.clone().reshape(dims)
    }
}
