use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Split};
use crate::models::DatasetKind;
use crate::tensor::Tensor;

const SIDE: usize = 8;

/// Blob centres, one per class, spread over the 8×8 canvas.
const CENTRES: [(f64, f64); 10] = [
    (1.5, 1.5),
    (1.5, 4.0),
    (1.5, 6.5),
    (4.0, 1.5),
    (4.0, 4.0),
    (4.0, 6.5),
    (6.5, 1.5),
    (6.5, 4.0),
    (6.5, 6.5),
    (3.0, 3.0),
];

/// Deterministic synthetic set: 10 classes of 1×8×8 Gaussian blobs with a
/// jittered centre, class-dependent width and pixel noise, clipped to `[0,1]`.
/// Labels cycle `0..10`, so any prefix of 10·k samples is balanced.
///
/// Panics if `n == 0`.
pub fn toy_dataset(n: usize, seed: u64, split: Split) -> Dataset {
    assert!(n > 0, "toy dataset needs at least one sample");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("valid std");
    let mut data = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 10;
        let (cy, cx) = CENTRES[class];
        let cy = cy + rng.gen_range(-0.5..0.5);
        let cx = cx + rng.gen_range(-0.5..0.5);
        let sigma = if class == 9 { 2.2 } else { 1.0 };
        for y in 0..SIDE {
            for x in 0..SIDE {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                let v = (-d2 / (2.0 * sigma * sigma)).exp() + noise.sample(&mut rng);
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
        labels.push(class);
    }
    let images = Tensor::new([n, 1, SIDE, SIDE], data).expect("toy tensor");
    Dataset::new(images, labels, DatasetKind::Toy, split).expect("toy labels are in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_balanced_and_bounded() {
        let a = toy_dataset(50, 4, Split::Train);
        assert_eq!(a, toy_dataset(50, 4, Split::Train));
        assert_ne!(a.images(), toy_dataset(50, 5, Split::Train).images());
        assert_eq!(a.images().dims(), &[50, 1, 8, 8]);
        for c in 0..10 {
            assert_eq!(a.labels().iter().filter(|&&l| l == c).count(), 5);
        }
        assert!(a.images().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
