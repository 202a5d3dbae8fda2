//! Datasets, binary loaders and seeded batching.
//!
//! Pixels are scaled by `1/255` into `[0, 1]` and nothing else: no mean
//! centering, no per-channel standardization. Dataset files are read from a
//! local directory; nothing is downloaded.

mod cifar;
mod mnist;
mod toy;

pub use cifar::{load_cifar10, load_cifar100, parse_cifar, CifarVariant};
pub use mnist::{load_mnist, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use toy::toy_dataset;

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::DatasetKind;
use crate::tensor::Tensor;

/// Environment variable naming the default dataset root.
pub const DATA_DIR_ENV: &str = "GRADPATH_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// An immutable labeled image collection.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    kind: DatasetKind,
    split: Split,
}

impl Dataset {
    /// Validates labels against the class count of `kind`.
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, kind: DatasetKind, split: Split) -> Result<Self> {
        let n = images.shape().as4()?.0;
        if n != labels.len() {
            return Err(Error::Data(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= kind.classes()) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {} classes",
                kind.classes()
            )));
        }
        Ok(Dataset { images, labels, kind, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn class_count(&self) -> usize {
        self.kind.classes()
    }

    /// `(channels, height, width)`.
    pub fn image_dims(&self) -> [usize; 3] {
        let d = self.images.dims();
        [d[1], d[2], d[3]]
    }

    /// The first `n` samples (all of them when `n >= len`).
    pub fn take(&self, n: usize) -> Result<Dataset> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        if n == 0 {
            return Err(Error::Parameter("subset size must be at least 1".into()));
        }
        Ok(Dataset {
            images: self.images.slice_batch(0, n)?,
            labels: self.labels[..n].to_vec(),
            kind: self.kind,
            split: self.split,
        })
    }

    /// Collects the given sample indices into a batch.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::Parameter("a batch needs at least one sample".into()));
        }
        let [c, h, w] = self.image_dims();
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Parameter(format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        Ok(Batch {
            images: Tensor::new([indices.len(), c, h, w], data)?,
            labels,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Splits `0..n` into batches, optionally shuffled by a seeded generator.
/// The last batch may be short.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size < 1 {
        return Err(Error::Parameter("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// One epoch of batches over `dataset`.
pub fn batches(
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<impl Iterator<Item = Result<Batch>> + '_> {
    let plan = batch_indices(dataset.len(), batch_size, seed, shuffle)?;
    Ok(plan.into_iter().map(move |idx| dataset.gather(&idx)))
}

/// `GRADPATH_DATA_DIR`, if set.
pub fn default_data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

/// First existing directory among `root` and `root/<sub>` for each candidate sub.
fn locate(root: &Path, subs: &[&str], probe: &str) -> Option<PathBuf> {
    std::iter::once(root.to_path_buf())
        .chain(subs.iter().map(|s| root.join(s)))
        .find(|dir| dir.join(probe).is_file())
}

/// Loads a standard split from a dataset root.
///
/// Recognized layouts (each also accepted directly at the root):
/// `mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte`,
/// `cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin`,
/// `cifar-100-binary/{train,test}.bin`. The toy set is generated.
pub fn load_split(kind: DatasetKind, root: &Path, split: Split) -> Result<Dataset> {
    let missing = |what: &str| {
        Error::Data(format!(
            "{kind} {split} files not found under {} (looked for {what})",
            root.display()
        ))
    };
    match kind {
        DatasetKind::Mnist => {
            let prefix = match split {
                Split::Train => "train",
                Split::Test => "t10k",
            };
            let images = format!("{prefix}-images-idx3-ubyte");
            let labels = format!("{prefix}-labels-idx1-ubyte");
            let dir = locate(root, &["mnist", "MNIST/raw"], &images).ok_or_else(|| missing(&images))?;
            load_mnist(dir.join(&images), dir.join(&labels), split)
        }
        DatasetKind::Cifar10 => {
            let files: Vec<String> = match split {
                Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
                Split::Test => vec!["test_batch.bin".into()],
            };
            let dir = locate(root, &["cifar-10-batches-bin", "cifar10"], &files[0])
                .ok_or_else(|| missing(&files[0]))?;
            let paths: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).collect();
            load_cifar10(&paths, split)
        }
        DatasetKind::Cifar100 => {
            let file = format!("{split}.bin");
            let dir = locate(root, &["cifar-100-binary", "cifar100"], &file).ok_or_else(|| missing(&file))?;
            load_cifar100(dir.join(file), split)
        }
        DatasetKind::Toy => Ok(toy_dataset(
            match split {
                Split::Train => 200,
                Split::Test => 100,
            },
            match split {
                Split::Train => 0,
                Split::Test => 1,
            },
            split,
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn remainder_batch_is_emitted() {
        let plan = batch_indices(10, 4, 0, false).unwrap();
        let sizes: Vec<usize> = plan.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(matches!(batch_indices(10, 0, 0, true), Err(Error::Parameter(_))));
    }

    #[test]
    fn same_seed_same_order() {
        let a = batch_indices(100, 7, 42, true).unwrap();
        assert_eq!(a, batch_indices(100, 7, 42, true).unwrap());
        assert_ne!(a, batch_indices(100, 7, 43, true).unwrap());
        assert_ne!(a, batch_indices(100, 7, 42, false).unwrap());
    }

    #[test]
    fn gather_and_take() {
        let ds = toy_dataset(20, 3, Split::Train);
        let b = ds.gather(&[3, 0]).unwrap();
        assert_eq!(b.images.dims(), &[2, 1, 8, 8]);
        assert_eq!(b.labels, vec![ds.labels()[3], ds.labels()[0]]);
        assert_eq!(&b.images.data()[..64], &ds.images().data()[3 * 64..4 * 64]);
        assert_eq!(ds.take(5).unwrap().len(), 5);
        assert_eq!(ds.take(500).unwrap().len(), 20);
        assert!(ds.gather(&[20]).is_err());
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        let images = Tensor::zeros([2, 1, 8, 8]).unwrap();
        assert!(Dataset::new(images.clone(), vec![0, 10], DatasetKind::Toy, Split::Train).is_err());
        assert!(Dataset::new(images, vec![0], DatasetKind::Toy, Split::Train).is_err());
    }

    proptest! {
        #[test]
        fn batches_partition_the_indices(n in 1usize..200, bs in 1usize..40, seed in any::<u64>(), shuffle in any::<bool>()) {
            let plan = batch_indices(n, bs, seed, shuffle).unwrap();
            prop_assert_eq!(plan.len(), n.div_ceil(bs));
            prop_assert!(plan.iter().all(|b| !b.is_empty() && b.len() <= bs));
            let mut all: Vec<usize> = plan.into_iter().flatten().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
