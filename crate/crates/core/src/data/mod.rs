//! Datasets and sample-image files.

mod digits;
mod idx;
mod pgm;
mod ring;

pub use digits::{gen_synth_digits, DigitsSpec, DIGIT_SIDE};
pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels, pixel_to_unit,
    IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use pgm::{read_pgm, unit_to_pixel, write_pgm, write_sample_grid, write_scatter, Pgm};
pub use ring::{gen_ring_mixture, ring_centers, RingMixtureSpec};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Immutable collection of samples scaled into [−1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Tensor,
    labels: Option<Vec<usize>>,
    image_shape: Option<(usize, usize)>,
    tag: String,
}

impl Dataset {
    /// Validates the [−1, 1] range and the label count.
    pub fn new(
        samples: Tensor,
        labels: Option<Vec<usize>>,
        image_shape: Option<(usize, usize)>,
        tag: impl Into<String>,
    ) -> Result<Self> {
        if samples.shape().len() != 2 {
            return Err(Error::invalid("dataset samples must be a matrix"));
        }
        if let Some(v) = samples.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("sample value {v} outside [-1, 1]")));
        }
        if let Some(l) = &labels {
            if l.len() != samples.rows() {
                return Err(Error::CountMismatch {
                    images: samples.rows(),
                    labels: l.len(),
                });
            }
        }
        if let Some((h, w)) = image_shape {
            if h * w != samples.cols() {
                return Err(Error::invalid("image shape does not match feature dimension"));
            }
        }
        Ok(Dataset {
            samples,
            labels,
            image_shape,
            tag: tag.into(),
        })
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Uniformly drawn rows, with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Tensor> {
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..self.len())).collect();
        self.samples.select_rows(&idx)
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            samples: self.samples.select_rows(idx)?,
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            image_shape: self.image_shape,
            tag: self.tag.clone(),
        })
    }

    /// Random disjoint split; `first` receives `fraction` of the rows.
    pub fn split<R: Rng + ?Sized>(&self, fraction: f64, rng: &mut R) -> Result<(Dataset, Dataset)> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let cut = ((self.len() as f64) * fraction).round() as usize;
        if cut == 0 || cut >= self.len() {
            return Err(Error::invalid("split leaves an empty part"));
        }
        Ok((self.subset(&idx[..cut])?, self.subset(&idx[cut..])?))
    }

    /// Zero-pads square images (background −1) to `side × side`, centered.
    pub fn pad_images(&self, side: usize) -> Result<Dataset> {
        let (h, w) = self
            .image_shape
            .ok_or_else(|| Error::invalid("dataset has no image shape"))?;
        if side < h || side < w {
            return Err(Error::invalid("padding target smaller than the images"));
        }
        let (top, left) = ((side - h) / 2, (side - w) / 2);
        let mut data = vec![-1.0; self.len() * side * side];
        for i in 0..self.len() {
            let src = self.samples.row(i);
            let dst = &mut data[i * side * side..(i + 1) * side * side];
            for r in 0..h {
                dst[(r + top) * side + left..(r + top) * side + left + w]
                    .copy_from_slice(&src[r * w..(r + 1) * w]);
            }
        }
        Dataset::new(
            Tensor::new(vec![self.len(), side * side], data)?,
            self.labels.clone(),
            Some((side, side)),
            format!("{}-pad{side}", self.tag),
        )
    }

    /// CSV with header `label,x0,x1,...`; the label column is empty for
    /// unlabeled data. The first comment line records tag and image shape.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let shape = self
            .image_shape
            .map_or("none".to_string(), |(h, w)| format!("{h}x{w}"));
        writeln!(out, "# tag={} image={shape}", self.tag).unwrap();
        out.push_str("label");
        for j in 0..self.dim() {
            write!(out, ",x{j}").unwrap();
        }
        out.push('\n');
        for i in 0..self.len() {
            if let Some(l) = &self.labels {
                write!(out, "{}", l[i]).unwrap();
            }
            for v in self.samples.row(i) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        let err = |msg: String| Error::parse(path, msg);
        let mut lines = text.lines();
        let meta = lines.next().ok_or_else(|| err("empty file".into()))?;
        let mut tag = String::from("csv");
        let mut image_shape = None;
        for part in meta.trim_start_matches('#').split_whitespace() {
            if let Some(t) = part.strip_prefix("tag=") {
                tag = t.to_string();
            } else if let Some(s) = part.strip_prefix("image=") {
                if let Some((h, w)) = s.split_once('x') {
                    image_shape = Some((
                        h.parse().map_err(|_| err("bad image height".into()))?,
                        w.parse().map_err(|_| err("bad image width".into()))?,
                    ));
                }
            }
        }
        let header = lines.next().ok_or_else(|| err("missing header".into()))?;
        let dim = header.split(',').count() - 1;
        if dim == 0 {
            return Err(err("no feature columns".into()));
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut labeled = None;
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != dim + 1 {
                return Err(err(format!("row {n} has {} cells", cells.len())));
            }
            let has_label = !cells[0].is_empty();
            if *labeled.get_or_insert(has_label) != has_label {
                return Err(err(format!("row {n}: mixed labeled and unlabeled rows")));
            }
            if has_label {
                labels.push(cells[0].parse().map_err(|_| err(format!("row {n}: bad label")))?);
            }
            for c in &cells[1..] {
                data.push(c.parse::<f64>().map_err(|e| err(format!("row {n}: {e}")))?);
            }
        }
        let rows = data.len() / dim;
        Dataset::new(
            Tensor::new(vec![rows, dim], data)?,
            labeled.unwrap_or(false).then_some(labels),
            image_shape,
            tag,
        )
    }
}

/// Resolves a dataset name: `digits`, `ring`, `csv:<path>` or
/// `idx:<images>,<labels>`. `samples` and `seed` only affect the procedural
/// datasets.
pub fn load_named(name: &str, samples: usize, seed: u64) -> Result<Dataset> {
    if let Some(path) = name.strip_prefix("csv:") {
        return Dataset::read_csv(Path::new(path));
    }
    if let Some(paths) = name.strip_prefix("idx:") {
        let (images, labels) = paths
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("{name}: expected idx:<images>,<labels>")))?;
        return load_idx(Path::new(images), Path::new(labels));
    }
    match name {
        "digits" => gen_synth_digits(&DigitsSpec {
            samples,
            seed,
            ..DigitsSpec::default()
        }),
        "ring" => gen_ring_mixture(&RingMixtureSpec {
            samples,
            seed,
            ..RingMixtureSpec::default()
        }),
        _ => Err(Error::Config(format!(
            "unknown dataset {name:?}; expected digits, ring, csv:<path> or idx:<images>,<labels>"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn rejects_out_of_range_values_and_label_mismatch() {
        let t = Tensor::from_rows(&[vec![0.5, 1.5]]).unwrap();
        assert!(Dataset::new(t, None, None, "x").is_err());
        let t = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            Dataset::new(t, Some(vec![1, 2]), None, "x"),
            Err(Error::CountMismatch { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let d = gen_synth_digits(&DigitsSpec {
            samples: 20,
            seed: 4,
            ..DigitsSpec::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        d.write_csv(&p).unwrap();
        assert_eq!(Dataset::read_csv(&p).unwrap(), d);
    }

    #[test]
    fn padding_centers_images() {
        let d = gen_synth_digits(&DigitsSpec {
            samples: 3,
            seed: 1,
            ..DigitsSpec::default()
        })
        .unwrap();
        let p = d.pad_images(12).unwrap();
        assert_eq!(p.dim(), 144);
        assert_eq!(p.samples().row(0)[2 * 12 + 2], d.samples().row(0)[0]);
        assert_eq!(p.samples().row(0)[0], -1.0);
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let d = gen_ring_mixture(&RingMixtureSpec {
            samples: 100,
            ..RingMixtureSpec::default()
        })
        .unwrap();
        let (a, b) = d.split(0.7, &mut stream(0, 0)).unwrap();
        assert_eq!(a.len() + b.len(), 100);
        assert_eq!(a.len(), 70);
    }
}
