use rand::Rng;

use super::{check_upstream, kaiming_normal, take_cache, Param};
use crate::error::{Error, Result};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Scalar, Tensor};

/// Affine map `y = x·W + b` with `W: [fin, fout]`.
#[derive(Debug, Clone)]
pub struct Dense<T = f32> {
    pub(crate) weight: Param<T>,
    pub(crate) bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Result<Self> {
        let weight = kaiming_normal(&[in_features, out_features], in_features, rng)?;
        Self::from_weights(weight, Tensor::zeros([out_features])?)
    }

    pub fn from_weights(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (_, fout) = weight.shape().as2()?;
        if bias.dims() != [fout] {
            return Err(Error::Dimension(format!(
                "bias {:?} does not match {fout} outputs",
                bias.dims()
            )));
        }
        Ok(Dense {
            weight: Param::new(weight),
            bias: Param::new(bias),
            input: None,
        })
    }

    pub fn weight(&self) -> &Param<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Param<T> {
        &self.bias
    }

    pub fn in_features(&self) -> usize {
        self.weight.value().dims()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value().dims()[1]
    }

    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [b, fin] if fin == self.in_features() => Ok(vec![b, self.out_features()]),
            _ => Err(Error::Dimension(format!(
                "dense expects [b, {}] input, got {input:?}",
                self.in_features()
            ))),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out_dims = self.output_dims(x.dims())?;
        let (b, fout) = (out_dims[0], out_dims[1]);
        let mut out = Vec::with_capacity(b * fout);
        for _ in 0..b {
            out.extend_from_slice(self.bias.value().data());
        }
        gemm_nn(b, self.in_features(), fout, x.data(), self.weight.value().data(), &mut out);
        self.input = Some(x.clone());
        Tensor::new(out_dims, out)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&mut self.input, "dense")?;
        let out_dims = self.output_dims(x.dims())?;
        check_upstream(upstream, &out_dims, "dense")?;
        let (b, fin, fout) = (out_dims[0], self.in_features(), out_dims[1]);

        gemm_tn(fin, b, fout, x.data(), upstream.data(), self.weight.parts_mut().1.data_mut());
        let bias_grad = self.bias.parts_mut().1.data_mut();
        for row in upstream.data().chunks(fout) {
            for (g, &u) in bias_grad.iter_mut().zip(row) {
                *g += u;
            }
        }
        let mut dx = vec![T::zero(); b * fin];
        gemm_nt(b, fout, fin, upstream.data(), self.weight.value().data(), &mut dx);
        Tensor::new(x.dims().to_vec(), dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let mut d = Dense::from_weights(Tensor::identity(3).unwrap(), Tensor::zeros([3]).unwrap()).unwrap();
        let x = Tensor::new([2, 3], vec![1.0f32, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        assert_eq!(d.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_input_yields_bias_rows() {
        let bias = Tensor::new([2], vec![0.25f32, -1.0]).unwrap();
        let mut d = Dense::from_weights(Tensor::full([3, 2], 9.0).unwrap(), bias).unwrap();
        let y = d.forward(&Tensor::zeros([2, 3]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.25, -1.0, 0.25, -1.0]);
    }

    #[test]
    fn hand_affine_value() {
        let w = Tensor::new([2, 1], vec![3.0f32, 4.0]).unwrap();
        let mut d = Dense::from_weights(w, Tensor::new([1], vec![5.0]).unwrap()).unwrap();
        let y = d.forward(&Tensor::new([1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[16.0]);
    }

    #[test]
    fn scalar_weight_gradient() {
        let w = Tensor::new([1, 1], vec![1.0f32]).unwrap();
        let mut d = Dense::from_weights(w, Tensor::zeros([1]).unwrap()).unwrap();
        d.forward(&Tensor::new([1, 1], vec![2.0]).unwrap()).unwrap();
        d.backward(&Tensor::new([1, 1], vec![3.0]).unwrap()).unwrap();
        assert_eq!(d.weight().grad().data(), &[6.0]);
        assert_eq!(d.bias().grad().data(), &[3.0]);
    }

    #[test]
    fn input_width_mismatch() {
        let mut d = Dense::<f32>::from_weights(Tensor::zeros([3, 2]).unwrap(), Tensor::zeros([2]).unwrap()).unwrap();
        assert!(matches!(d.forward(&Tensor::zeros([1, 4]).unwrap()), Err(Error::Dimension(_))));
    }
}
