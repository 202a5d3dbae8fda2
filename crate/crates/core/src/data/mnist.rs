//! IDX (MNIST) parsing. Headers are big-endian:
//! images `0x00000803, n, rows, cols`; labels `0x00000801, n`.

use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::models::DatasetKind;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::format(path, bytes.len() as u64, format!("file ends before {what}"))
        })
}

fn check_magic(bytes: &[u8], want: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path, "magic number")?;
    if magic != want {
        return Err(Error::format(
            path,
            0,
            format!("bad magic {magic:#010x}, expected {want:#010x}"),
        ));
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, expected: usize, path: &Path) -> Result<()> {
    let have = bytes.len() - header;
    if have < expected {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated payload: {have} of {expected} bytes"),
        ));
    }
    if have > expected {
        return Err(Error::format(
            path,
            (header + expected) as u64,
            format!("{} unexpected trailing bytes", have - expected),
        ));
    }
    Ok(())
}

/// Parses an IDX image file into `[n, 1, rows, cols]` floats in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let n = be_u32(bytes, 4, path, "image count")? as usize;
    let rows = be_u32(bytes, 8, path, "row count")? as usize;
    let cols = be_u32(bytes, 12, path, "column count")? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::format(path, 4, format!("degenerate dims {n}x{rows}x{cols}")));
    }
    check_payload(bytes, 16, n * rows * cols, path)?;
    let data = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new([n, 1, rows, cols], data)
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let n = be_u32(bytes, 4, path, "label count")? as usize;
    check_payload(bytes, 8, n, path)?;
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an MNIST image/label file pair. Images must be 28×28.
pub fn load_mnist(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let (image_path, label_path) = (image_path.as_ref(), label_path.as_ref());
    let images = parse_idx_images(&read(image_path)?, image_path)?;
    let labels = parse_idx_labels(&read(label_path)?, label_path)?;

    let dims = images.dims();
    if dims[2..] != [28, 28] {
        return Err(Error::format(
            image_path,
            8,
            format!("expected 28x28 images, header says {}x{}", dims[2], dims[3]),
        ));
    }
    if dims[0] != labels.len() {
        return Err(Error::format(
            label_path,
            4,
            format!("{} labels for {} images", labels.len(), dims[0]),
        ));
    }
    if let Some(pos) = labels.iter().position(|&l| l >= 10) {
        return Err(Error::format(
            label_path,
            8 + pos as u64,
            format!("label {} is not a digit", labels[pos]),
        ));
    }
    Dataset::new(images, labels, DatasetKind::Mnist, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_IMAGES_MAGIC, n, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    #[test]
    fn pixel_scaling_is_exact_at_the_ends() {
        let bytes = idx_images(1, 2, 2, &[0, 255, 128, 1]);
        let t = parse_idx_images(&bytes, Path::new("x")).unwrap();
        assert_eq!(t.dims(), &[1, 1, 2, 2]);
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[1], 1.0);
        assert_eq!(t.data()[2], 128.0 / 255.0);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = idx_images(1, 2, 2, &[0; 4]);
        bytes[3] = 0x01;
        match parse_idx_images(&bytes, Path::new("x")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_and_oversized_payloads() {
        let short = idx_images(2, 2, 2, &[0; 7]);
        assert!(matches!(parse_idx_images(&short, Path::new("x")), Err(Error::Format { offset: 23, .. })));
        let long = idx_images(1, 2, 2, &[0; 5]);
        assert!(matches!(parse_idx_images(&long, Path::new("x")), Err(Error::Format { offset: 20, .. })));
        assert!(matches!(parse_idx_images(&[0, 0, 8], Path::new("x")), Err(Error::Format { .. })));
    }

    #[test]
    fn labels_parse() {
        let mut bytes = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[7, 0, 9]);
        assert_eq!(parse_idx_labels(&bytes, Path::new("l")).unwrap(), vec![7, 0, 9]);
        // an image header is not a label header
        assert!(parse_idx_labels(&idx_images(1, 1, 1, &[0]), Path::new("l")).is_err());
    }
}
