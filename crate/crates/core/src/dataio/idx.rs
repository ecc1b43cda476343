use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Precision;

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

fn read_u32_be(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]])).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        found: bytes.len(),
        expected: at + 4,
    })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_u32_be(bytes, 0, path)?;
    if found != expected {
        return Err(Error::WrongMagic { path: path.to_path_buf(), found, expected });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    let expected = header + len;
    if bytes.len() < expected {
        return Err(Error::Truncated { path: path.to_path_buf(), found: bytes.len(), expected });
    }
    Ok(&bytes[header..expected])
}

/// Parse an IDX3 image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images<'a>(bytes: &'a [u8], path: &Path) -> Result<(usize, usize, usize, &'a [u8])> {
    check_magic(bytes, IMAGES_MAGIC, path)?;
    let n = read_u32_be(bytes, 4, path)? as usize;
    let rows = read_u32_be(bytes, 8, path)? as usize;
    let cols = read_u32_be(bytes, 12, path)? as usize;
    Ok((n, rows, cols, payload(bytes, 16, n * rows * cols, path)?))
}

/// Parse an IDX1 label file.
pub fn parse_idx_labels<'a>(bytes: &'a [u8], path: &Path) -> Result<&'a [u8]> {
    check_magic(bytes, LABELS_MAGIC, path)?;
    let n = read_u32_be(bytes, 4, path)? as usize;
    payload(bytes, 8, n, path)
}

/// Load an MNIST image/label pair as `[N, 1, rows, cols]` samples.
pub fn load_mnist(images: &Path, labels: &Path, precision: Precision) -> Result<Dataset> {
    let image_bytes = std::fs::read(images)?;
    let label_bytes = std::fs::read(labels)?;
    let (n, rows, cols, pixels) = parse_idx_images(&image_bytes, images)?;
    let label_data = parse_idx_labels(&label_bytes, labels)?;
    if n != label_data.len() {
        return Err(Error::CountMismatch { images: n, labels: label_data.len() });
    }
    let labels = label_data.iter().map(|&l| l as usize).collect();
    Dataset::new(vec![1, rows, cols], pixels, labels, precision)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IMAGES_MAGIC, n, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(pixels);
        v
    }

    fn labels(l: &[u8]) -> Vec<u8> {
        let mut v = LABELS_MAGIC.to_be_bytes().to_vec();
        v.extend_from_slice(&(l.len() as u32).to_be_bytes());
        v.extend_from_slice(l);
        v
    }

    #[test]
    fn parses_headers() {
        let b = images(2, 2, 1, &[0, 1, 2, 255]);
        let (n, r, c, p) = parse_idx_images(&b, Path::new("x")).unwrap();
        assert_eq!((n, r, c, p), (2, 2, 1, &[0u8, 1, 2, 255][..]));
        assert_eq!(parse_idx_labels(&labels(&[7, 9]), Path::new("y")).unwrap(), &[7, 9]);
    }

    #[test]
    fn distinct_errors() {
        let swapped = labels(&[1, 2]);
        assert!(matches!(parse_idx_images(&swapped, Path::new("x")), Err(Error::WrongMagic { found: 2049, .. })));
        let short = images(2, 2, 2, &[0; 7]);
        assert!(matches!(
            parse_idx_images(&short, Path::new("x")),
            Err(Error::Truncated { expected: 24, found: 23, .. })
        ));
        assert!(matches!(parse_idx_labels(&[0, 0], Path::new("y")), Err(Error::Truncated { .. })));

        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        std::fs::write(&ip, images(2, 1, 1, &[0, 255])).unwrap();
        std::fs::write(&lp, labels(&[3])).unwrap();
        assert!(matches!(load_mnist(&ip, &lp, Precision::Pure16), Err(Error::CountMismatch { images: 2, labels: 1 })));
        std::fs::write(&lp, labels(&[3, 4])).unwrap();
        let d = load_mnist(&ip, &lp, Precision::Pure16).unwrap();
        assert_eq!(d.sample_shape(), &[1, 1, 1]);
        assert_eq!(d.pixels(), &[0.0, 1.0]);
    }
}
