//! Big-endian IDX files as distributed with MNIST.
//!
//! Images: magic `0x00000803`, then u32 count, rows, cols, then one
//! unsigned byte per pixel. Labels: magic `0x00000801`, u32 count, then one
//! byte per label. Pixels map linearly from [0, 255] to [−1, 1].

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            expected: offset + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { found, expected });
    }
    Ok(())
}

fn payload(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8]> {
    let expected = offset + len;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(&bytes[offset..])
}

pub fn pixel_to_unit(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

/// Returns `(rows, cols, pixels)` with one `u8` per pixel, image-major.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let px = payload(bytes, 16, n * rows * cols)?;
    Ok((rows, cols, px.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, n)?.to_vec())
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Loads an image/label file pair. Nothing is returned unless both files
/// parse completely and agree on the sample count.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (rows, cols, px) = parse_idx_images(&std::fs::read(images)?)?;
    let lab = parse_idx_labels(&std::fs::read(labels)?)?;
    let n = if rows * cols == 0 { 0 } else { px.len() / (rows * cols) };
    if n != lab.len() {
        return Err(Error::CountMismatch {
            images: n,
            labels: lab.len(),
        });
    }
    if n == 0 {
        return Err(Error::invalid("IDX file holds no images"));
    }
    let data = px.iter().map(|&p| pixel_to_unit(p)).collect();
    Dataset::new(
        Tensor::new(vec![n, rows * cols], data)?,
        Some(lab.into_iter().map(usize::from).collect()),
        Some((rows, cols)),
        format!("idx{rows}x{cols}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_map_to_unit_interval() {
        assert_eq!(pixel_to_unit(0), -1.0);
        assert_eq!(pixel_to_unit(255), 1.0);
    }

    #[test]
    fn wrong_magic_and_truncation_are_distinct_errors() {
        let mut imgs = encode_idx_images(2, 2, &[1, 2, 3, 4]);
        assert!(parse_idx_images(&imgs).is_ok());
        imgs.pop();
        assert!(matches!(parse_idx_images(&imgs), Err(Error::Truncated { .. })));
        let labels = encode_idx_labels(&[1]);
        assert!(matches!(
            parse_idx_images(&labels),
            Err(Error::BadMagic {
                found: IDX_LABELS_MAGIC,
                ..
            })
        ));
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (pi, pl) = (dir.path().join("i"), dir.path().join("l"));
        std::fs::write(&pi, encode_idx_images(1, 2, &[0, 255, 10, 20])).unwrap();
        std::fs::write(&pl, encode_idx_labels(&[3])).unwrap();
        assert!(matches!(load_idx(&pi, &pl), Err(Error::CountMismatch { .. })));
    }
}
