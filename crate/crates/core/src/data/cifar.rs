//! CIFAR binary records.
//!
//! CIFAR-10: `label, 3072 pixels` (3073 bytes). CIFAR-100: `coarse, fine,
//! 3072 pixels` (3074 bytes); the fine label is used. Pixels are three
//! 1024-byte planes (R, G, B), each 32×32 row-major, which is already the
//! `[c, h, w]` layout.

use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::models::DatasetKind;
use crate::tensor::Tensor;

const PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn record_len(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1 + PIXELS,
            CifarVariant::Cifar100 => 2 + PIXELS,
        }
    }

    fn label_offset(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 0,
            CifarVariant::Cifar100 => 1,
        }
    }

    fn kind(self) -> DatasetKind {
        match self {
            CifarVariant::Cifar10 => DatasetKind::Cifar10,
            CifarVariant::Cifar100 => DatasetKind::Cifar100,
        }
    }
}

/// Parses one CIFAR binary file, appending pixels (scaled to `[0,1]`) and labels.
pub fn parse_cifar(
    bytes: &[u8],
    variant: CifarVariant,
    path: &Path,
    pixels: &mut Vec<f32>,
    labels: &mut Vec<usize>,
) -> Result<usize> {
    let rec = variant.record_len();
    if bytes.is_empty() {
        return Err(Error::format(path, 0, "empty file"));
    }
    if !bytes.len().is_multiple_of(rec) {
        let whole = bytes.len() / rec * rec;
        return Err(Error::format(
            path,
            whole as u64,
            format!("{} bytes is not a multiple of the {rec}-byte record", bytes.len()),
        ));
    }
    let classes = variant.kind().classes();
    for (i, record) in bytes.chunks_exact(rec).enumerate() {
        let label = record[variant.label_offset()] as usize;
        if label >= classes {
            return Err(Error::format(
                path,
                (i * rec + variant.label_offset()) as u64,
                format!("label {label} out of range for {classes} classes"),
            ));
        }
        labels.push(label);
        pixels.extend(record[rec - PIXELS..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(bytes.len() / rec)
}

fn load(paths: &[&Path], variant: CifarVariant, split: Split) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::Parameter("no CIFAR files given".into()));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| Error::io(*path, e))?;
        parse_cifar(&bytes, variant, path, &mut pixels, &mut labels)?;
    }
    let images = Tensor::new([labels.len(), 3, 32, 32], pixels)?;
    Dataset::new(images, labels, variant.kind(), split)
}

/// Loads and concatenates CIFAR-10 batch files in the given order.
pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P], split: Split) -> Result<Dataset> {
    let paths: Vec<&Path> = batch_paths.iter().map(AsRef::as_ref).collect();
    load(&paths, CifarVariant::Cifar10, split)
}

pub fn load_cifar100(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    load(&[path.as_ref()], CifarVariant::Cifar100, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record10(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend(std::iter::repeat_n(fill, PIXELS));
        r
    }

    #[test]
    fn one_record_is_one_sample() {
        let (mut px, mut lb) = (Vec::new(), Vec::new());
        let n = parse_cifar(&record10(7, 255), CifarVariant::Cifar10, Path::new("c"), &mut px, &mut lb).unwrap();
        assert_eq!(n, 1);
        assert_eq!(lb, vec![7]);
        assert_eq!(px.len(), PIXELS);
        assert!(px.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn channel_planes_land_in_chw_order() {
        let mut r = vec![0u8];
        r.extend(std::iter::repeat_n(10, 1024));
        r.extend(std::iter::repeat_n(20, 1024));
        r.extend(std::iter::repeat_n(30, 1024));
        let (mut px, mut lb) = (Vec::new(), Vec::new());
        parse_cifar(&r, CifarVariant::Cifar10, Path::new("c"), &mut px, &mut lb).unwrap();
        assert_eq!(px[0], 10.0 / 255.0);
        assert_eq!(px[1024], 20.0 / 255.0);
        assert_eq!(px[3071], 30.0 / 255.0);
    }

    #[test]
    fn cifar100_uses_the_fine_label() {
        let mut r = vec![19u8, 99];
        r.extend(std::iter::repeat_n(0, PIXELS));
        let (mut px, mut lb) = (Vec::new(), Vec::new());
        parse_cifar(&r, CifarVariant::Cifar100, Path::new("c"), &mut px, &mut lb).unwrap();
        assert_eq!(lb, vec![99]);
    }

    #[test]
    fn bad_arithmetic_and_labels() {
        let (mut px, mut lb) = (Vec::new(), Vec::new());
        let mut two = record10(1, 0);
        two.extend(record10(2, 0));
        two.pop();
        let err = parse_cifar(&two, CifarVariant::Cifar10, Path::new("c"), &mut px, &mut lb).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 3073, .. }), "{err}");

        let err = parse_cifar(&record10(10, 0), CifarVariant::Cifar10, Path::new("c"), &mut px, &mut lb).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));

        // a CIFAR-10 record is not a CIFAR-100 record
        assert!(parse_cifar(&record10(1, 0), CifarVariant::Cifar100, Path::new("c"), &mut px, &mut lb).is_err());
        assert!(parse_cifar(&[], CifarVariant::Cifar10, Path::new("c"), &mut px, &mut lb).is_err());
    }
}
