use super::{check_upstream, take_cache};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// 2×2 max pooling with stride 2.
///
/// Ties resolve to the first maximal element in row-major window order, and
/// the backward pass routes each upstream value to that single position.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2x2 {
    cache: Option<PoolCache>,
}

#[derive(Debug, Clone)]
struct PoolCache {
    input_dims: Vec<usize>,
    /// Flat input index of the winner for every output element.
    argmax: Vec<usize>,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        MaxPool2x2 { cache: None }
    }

    pub fn output_dims(input: &[usize]) -> Result<Vec<usize>> {
        let [b, c, h, w] = *input else {
            return Err(Error::Shape(format!(
                "maxpool expects [b,c,h,w] input, got {input:?}"
            )));
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "maxpool needs even spatial dims, got {h}x{w}"
            )));
        }
        Ok(vec![b, c, h / 2, w / 2])
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out_dims = Self::output_dims(x.dims())?;
        let (h, w) = (x.dims()[2], x.dims()[3]);
        let (oh, ow) = (h / 2, w / 2);
        let planes = out_dims[0] * out_dims[1];
        let src = x.data();

        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let top = base + 2 * oy * w + 2 * ox;
                    let mut best = top;
                    for idx in [top + 1, top + w, top + w + 1] {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        self.cache = Some(PoolCache {
            input_dims: x.dims().to_vec(),
            argmax,
        });
        Tensor::new(out_dims, out)
    }

    pub fn backward<T: Scalar>(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = take_cache(&mut self.cache, "maxpool2x2")?;
        check_upstream(upstream, &Self::output_dims(&cache.input_dims)?, "maxpool2x2")?;
        let mut dx = Tensor::zeros(cache.input_dims)?;
        let dst = dx.data_mut();
        for (&idx, &g) in cache.argmax.iter().zip(upstream.data()) {
            dst[idx] += g;
        }
        Ok(dx)
    }
}
