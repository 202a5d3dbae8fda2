//! 2-D convolution (cross-correlation, no kernel flip) via im2col + GEMM.

use rand::Rng;

use super::{check_upstream, kaiming_normal, take_cache, Param};
use crate::error::{Error, Result};
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Conv2d<T = f32> {
    pub(crate) weight: Param<T>,
    pub(crate) bias: Param<T>,
    padding: usize,
    stride: usize,
    cache: Option<ConvCache<T>>,
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    input: Tensor<T>,
    out_dims: Vec<usize>,
}

/// Geometry of one convolution call.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

impl<T: Scalar> Conv2d<T> {
    /// A 3×3 convolution with Kaiming-normal weights and zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = kaiming_normal(&[out_channels, in_channels, 3, 3], in_channels * 9, rng)?;
        let bias = Tensor::zeros([out_channels])?;
        Self::from_weights(weight, bias, padding, 1)
    }

    /// Builds from explicit `[cout, cin, k, k]` weights and `[cout]` bias.
    pub fn from_weights(
        weight: Tensor<T>,
        bias: Tensor<T>,
        padding: usize,
        stride: usize,
    ) -> Result<Self> {
        let (cout, _, kh, kw) = weight.shape().as4()?;
        if kh != kw {
            return Err(Error::Shape(format!("kernel must be square, got {kh}x{kw}")));
        }
        if bias.dims() != [cout] {
            return Err(Error::Dimension(format!(
                "bias {:?} does not match {cout} output channels",
                bias.dims()
            )));
        }
        if stride == 0 {
            return Err(Error::Parameter("stride must be at least 1".into()));
        }
        Ok(Conv2d {
            weight: Param::new(weight),
            bias: Param::new(bias),
            padding,
            stride,
            cache: None,
        })
    }

    pub fn weight(&self) -> &Param<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Param<T> {
        &self.bias
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value().dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value().dims()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value().dims()[2]
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    fn geometry(&self, input: &[usize]) -> Result<Geometry> {
        let [_, cin, h, w] = *input else {
            return Err(Error::Shape(format!(
                "conv2d expects [b,c,h,w] input, got {input:?}"
            )));
        };
        if cin != self.in_channels() {
            return Err(Error::Dimension(format!(
                "conv2d expects {} input channels, got {cin}",
                self.in_channels()
            )));
        }
        let k = self.kernel();
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < k || pw < k {
            return Err(Error::Shape(format!(
                "{k}x{k} kernel does not fit padded input {ph}x{pw}"
            )));
        }
        if !(ph - k).is_multiple_of(self.stride) || !(pw - k).is_multiple_of(self.stride) {
            return Err(Error::Shape(format!(
                "stride {} does not tile padded input {ph}x{pw}",
                self.stride
            )));
        }
        Ok(Geometry {
            cin,
            h,
            w,
            k,
            pad: self.padding,
            stride: self.stride,
            oh: (ph - k) / self.stride + 1,
            ow: (pw - k) / self.stride + 1,
        })
    }

    pub fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>> {
        let g = self.geometry(input)?;
        Ok(vec![input[0], self.out_channels(), g.oh, g.ow])
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.geometry(x.dims())?;
        let b = x.dims()[0];
        let cout = self.out_channels();
        let plane = g.col_cols();
        let sample_in = g.cin * g.h * g.w;

        let mut out = vec![T::zero(); b * cout * plane];
        let mut cols = vec![T::zero(); g.col_rows() * plane];
        let weight = self.weight.value().data();
        let bias = self.bias.value().data();
        for (s, out_s) in out.chunks_mut(cout * plane).enumerate() {
            im2col(&x.data()[s * sample_in..(s + 1) * sample_in], &g, &mut cols);
            for (o, row) in out_s.chunks_mut(plane).enumerate() {
                row.fill(bias[o]);
            }
            gemm_nn(cout, g.col_rows(), plane, weight, &cols, out_s);
        }

        let out_dims = vec![b, cout, g.oh, g.ow];
        self.cache = Some(ConvCache {
            input: x.clone(),
            out_dims: out_dims.clone(),
        });
        Tensor::new(out_dims, out)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = take_cache(&mut self.cache, "conv2d")?;
        check_upstream(upstream, &cache.out_dims, "conv2d")?;
        let x = &cache.input;
        let g = self.geometry(x.dims())?;
        let b = x.dims()[0];
        let cout = self.out_channels();
        let plane = g.col_cols();
        let rows = g.col_rows();
        let sample_in = g.cin * g.h * g.w;

        let mut dx = vec![T::zero(); x.numel()];
        let mut cols = vec![T::zero(); rows * plane];
        let mut dcols = vec![T::zero(); rows * plane];
        let (w_val, w_grad) = self.weight.parts_mut();
        let b_grad = self.bias.parts_mut().1.data_mut();
        for s in 0..b {
            let dy = &upstream.data()[s * cout * plane..(s + 1) * cout * plane];
            im2col(&x.data()[s * sample_in..(s + 1) * sample_in], &g, &mut cols);
            gemm_nt(cout, plane, rows, dy, &cols, w_grad.data_mut());
            for (o, row) in dy.chunks(plane).enumerate() {
                b_grad[o] += row.iter().copied().sum::<T>();
            }
            dcols.fill(T::zero());
            gemm_tn(rows, cout, plane, w_val.data(), dy, &mut dcols);
            col2im(&dcols, &g, &mut dx[s * sample_in..(s + 1) * sample_in]);
        }
        Tensor::new(x.dims().to_vec(), dx)
    }
}

/// Unfolds one sample `[cin,h,w]` into `[cin·k·k, oh·ow]`, zero outside the image.
fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let plane = g.oh * g.ow;
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst_row.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the sample.
fn col2im<T: Scalar>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let plane = g.oh * g.ow;
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop cross-correlation used as the oracle.
    fn direct_conv(x: &Tensor<f64>, w: &Tensor<f64>, bias: &[f64], pad: usize) -> Vec<f64> {
        let (b, cin, h, wd) = x.shape().as4().unwrap();
        let (cout, _, k, _) = w.shape().as4().unwrap();
        let (oh, ow) = (h + 2 * pad - k + 1, wd + 2 * pad - k + 1);
        let mut out = vec![0.0; b * cout * oh * ow];
        for s in 0..b {
            for o in 0..cout {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = bias[o];
                        for c in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y + ky) as isize - pad as isize;
                                    let ix = (xx + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.at4(s, c, iy as usize, ix as usize)
                                            * w.at4(o, c, ky, kx);
                                    }
                                }
                            }
                        }
                        out[((s * cout + o) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn all_ones_matches_direct_oracle() {
        let x = Tensor::<f64>::full([1, 1, 3, 3], 1.0).unwrap();
        let w = Tensor::<f64>::full([1, 1, 3, 3], 1.0).unwrap();
        let want = direct_conv(&x, &w, &[0.0], 1);
        assert_eq!(want, vec![4., 6., 4., 6., 9., 6., 4., 6., 4.]);

        let mut conv = Conv2d::from_weights(w, Tensor::zeros([1]).unwrap(), 1, 1).unwrap();
        assert_eq!(conv.forward(&x).unwrap().data(), &want[..]);
    }

    #[test]
    fn random_multichannel_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Tensor<f64> = kaiming_normal(&[2, 3, 5, 6], 1, &mut rng).unwrap();
        let w: Tensor<f64> = kaiming_normal(&[4, 3, 3, 3], 1, &mut rng).unwrap();
        let bias = vec![0.1, -0.2, 0.3, 0.0];
        let want = direct_conv(&x, &w, &bias, 1);
        let mut conv =
            Conv2d::from_weights(w, Tensor::new([4], bias).unwrap(), 1, 1).unwrap();
        let got = conv.forward(&x).unwrap();
        assert_eq!(got.dims(), &[2, 4, 5, 6]);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_kernel_gives_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x: Tensor = kaiming_normal(&[1, 2, 4, 4], 1, &mut rng).unwrap();
        let mut conv =
            Conv2d::from_weights(Tensor::zeros([3, 2, 3, 3]).unwrap(), Tensor::zeros([3]).unwrap(), 1, 1)
                .unwrap();
        assert!(conv.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Tensor = kaiming_normal(&[2, 1, 5, 4], 1, &mut rng).unwrap();
        let mut w = Tensor::zeros([1, 1, 3, 3]).unwrap();
        w.data_mut()[4] = 1.0;
        let mut conv = Conv2d::from_weights(w, Tensor::zeros([1]).unwrap(), 1, 1).unwrap();
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn stride_and_shape_errors() {
        let w = Tensor::<f32>::zeros([1, 1, 3, 3]).unwrap();
        let mut conv = Conv2d::from_weights(w.clone(), Tensor::zeros([1]).unwrap(), 0, 2).unwrap();
        // 6 - 3 = 3 is not a multiple of 2
        assert!(matches!(
            conv.forward(&Tensor::zeros([1, 1, 6, 6]).unwrap()),
            Err(Error::Shape(_))
        ));
        assert_eq!(conv.output_dims(&[1, 1, 7, 7]).unwrap(), vec![1, 1, 3, 3]);
        assert!(Conv2d::from_weights(w, Tensor::zeros([1]).unwrap(), 0, 0).is_err());
        assert!(matches!(
            conv.forward(&Tensor::zeros([1, 2, 7, 7]).unwrap()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f32>::new(1, 2, 1, &mut rng).unwrap();
        let up = Tensor::zeros([1, 2, 4, 4]).unwrap();
        assert!(matches!(conv.backward(&up), Err(Error::State(_))));
    }
}
