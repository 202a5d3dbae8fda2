use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{take_cache, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Inverted dropout: survivors are scaled by `1/(1-p)` at train time, so
/// evaluation is the identity.
///
/// The layer owns a seeded generator; [`Dropout::reseed`] rewinds it, which
/// lets a caller replay the exact same masks.
#[derive(Debug, Clone)]
pub struct Dropout<T = f32> {
    p: f64,
    rng: ChaCha8Rng,
    /// `None` after an eval-mode forward (identity backward).
    cache: Option<Option<Vec<T>>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "dropout probability must be in [0, 1), got {p}"
            )));
        }
        Ok(Dropout {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cache: None,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Eval {
            self.cache = Some(None);
            return Ok(x.clone());
        }
        let keep = T::of(1.0 / (1.0 - self.p));
        let mask: Vec<T> = (0..x.numel())
            .map(|_| {
                if self.rng.gen::<f64>() < self.p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.cache = Some(Some(mask));
        Tensor::new(x.dims().to_vec(), out)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        match take_cache(&mut self.cache, "dropout")? {
            None => Ok(upstream.clone()),
            Some(mask) => {
                if mask.len() != upstream.numel() {
                    return Err(Error::Dimension(format!(
                        "dropout: upstream gradient has {} elements, mask has {}",
                        upstream.numel(),
                        mask.len()
                    )));
                }
                let data = upstream.data().iter().zip(&mask).map(|(&g, &m)| g * m).collect();
                Tensor::new(upstream.dims().to_vec(), data)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_is_validated() {
        assert!(Dropout::<f32>::new(1.0, 0).is_err());
        assert!(Dropout::<f32>::new(-0.1, 0).is_err());
        assert!(Dropout::<f32>::new(0.0, 0).is_ok());
    }

    #[test]
    fn zero_probability_and_eval_are_identity() {
        let x = Tensor::new([5], vec![1.5f32, -2.0, 0.0, 3.25, 9.0]).unwrap();
        let mut d = Dropout::new(0.0, 1).unwrap();
        assert_eq!(d.forward(&x, Mode::Train).unwrap(), x);
        let mut d = Dropout::new(0.5, 1).unwrap();
        assert_eq!(d.forward(&x, Mode::Eval).unwrap(), x);
        assert_eq!(d.backward(&x).unwrap(), x);
    }

    #[test]
    fn inverted_scaling_preserves_mean() {
        let x = Tensor::full([100_000], 1.0f32).unwrap();
        let mut d = Dropout::new(0.2, 42).unwrap();
        let y = d.forward(&x, Mode::Train).unwrap();
        let mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / 1e5;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
        assert!((zeros - 0.2).abs() < 0.01, "drop rate {zeros}");
    }

    #[test]
    fn backward_uses_forward_mask_and_reseed_replays() {
        let x = Tensor::full([64], 1.0f64).unwrap();
        let mut d = Dropout::new(0.5, 9).unwrap();
        let y = d.forward(&x, Mode::Train).unwrap();
        assert_eq!(d.backward(&x).unwrap(), y);
        d.reseed(9);
        assert_eq!(d.forward(&x, Mode::Train).unwrap(), y);
    }
}
