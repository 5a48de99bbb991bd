//! Binary PGM (P5) output for sample grids and scatter plots.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// [−1, 1] → [0, 255], rounding to nearest.
pub fn unit_to_pixel(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8
}

pub fn write_pgm(img: &Pgm, path: &Path) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = std::fs::read(path)?;
    let err = |m: &str| Error::parse(path, m);
    // Header: magic, width, height, maxval separated by whitespace, then a
    // single whitespace byte before the raster.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(err("only 8-bit P5 files are supported"));
    }
    let width: usize = fields[1].parse().map_err(|_| err("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| err("bad height"))?;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != width * height {
        return Err(Error::Truncated {
            expected: width * height,
            found: raster.len(),
        });
    }
    Ok(Pgm {
        width,
        height,
        pixels: raster.to_vec(),
    })
}

/// Tiles `[n, h·w]` samples row-major into a `rows × cols` grid. Missing
/// tiles stay black.
pub fn write_sample_grid(
    samples: &Tensor,
    image: (usize, usize),
    rows: usize,
    cols: usize,
    path: &Path,
) -> Result<Pgm> {
    let (h, w) = image;
    if samples.cols() != h * w {
        return Err(Error::invalid(format!(
            "samples of width {} cannot be shown as {h}x{w} images",
            samples.cols()
        )));
    }
    let (width, height) = (cols * w, rows * h);
    let mut pixels = vec![0u8; width * height];
    for t in 0..(rows * cols).min(samples.rows()) {
        let (tr, tc) = (t / cols, t % cols);
        let src = samples.row(t);
        for r in 0..h {
            for c in 0..w {
                pixels[(tr * h + r) * width + tc * w + c] = unit_to_pixel(src[r * w + c]);
            }
        }
    }
    let img = Pgm {
        width,
        height,
        pixels,
    };
    write_pgm(&img, path)?;
    Ok(img)
}

/// Renders 2-D points in [−1, 1]² as white dots on a black `size × size`
/// canvas, with `y` pointing up.
pub fn write_scatter(points: &Tensor, size: usize, path: &Path) -> Result<Pgm> {
    if points.cols() != 2 || size == 0 {
        return Err(Error::invalid("scatter needs 2-D points and a positive size"));
    }
    let mut pixels = vec![0u8; size * size];
    let to_px = |v: f64| (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * (size - 1) as f64).round() as usize;
    for i in 0..points.rows() {
        let p = points.row(i);
        let (x, y) = (to_px(p[0]), size - 1 - to_px(p[1]));
        pixels[y * size + x] = 255;
    }
    let img = Pgm {
        width: size,
        height: size,
        pixels,
    };
    write_pgm(&img, path)?;
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn constant_black_batch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        let s = Tensor::full(&[6, 12], -1.0);
        write_sample_grid(&s, (3, 4), 2, 3, &p).unwrap();
        let img = read_pgm(&p).unwrap();
        assert_eq!((img.width, img.height), (12, 6));
        assert!(img.pixels.iter().all(|&v| v == 0));
    }

    #[test]
    fn round_trip_within_one_quantum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        let mut rng = stream(1, 1);
        let raw = Tensor::randn(&[4, 16], 0.6, &mut rng);
        let s = Tensor::new(
            vec![4, 16],
            raw.data().iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
        )
        .unwrap();
        write_sample_grid(&s, (4, 4), 2, 2, &p).unwrap();
        let img = read_pgm(&p).unwrap();
        for t in 0..4 {
            let (tr, tc) = (t / 2, t % 2);
            for r in 0..4 {
                for c in 0..4 {
                    let back = img.pixels[(tr * 4 + r) * 8 + tc * 4 + c] as f64 / 127.5 - 1.0;
                    assert!((back - s.row(t)[r * 4 + c]).abs() <= 2.0 / 255.0 / 2.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_image_shape() {
        let dir = tempfile::tempdir().unwrap();
        let s = Tensor::zeros(&[2, 5]);
        assert!(write_sample_grid(&s, (2, 2), 1, 2, &dir.path().join("x.pgm")).is_err());
    }
}
