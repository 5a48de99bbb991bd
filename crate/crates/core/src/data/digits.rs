//! Procedural 8×8 digit glyphs, a small stand-in for handwritten digits.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, streams};
use crate::tensor::Tensor;

pub const DIGIT_SIDE: usize = 8;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;

/// 5×7 bitmap font, one row string per glyph line.
const GLYPHS: [[&str; GLYPH_H]; 10] = [
    ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
];

#[derive(Clone, Debug, PartialEq)]
pub struct DigitsSpec {
    pub samples: usize,
    pub seed: u64,
    /// Standard deviation of additive pixel noise, in [−1, 1] units.
    pub noise: f64,
    /// Stroke intensity is drawn uniformly from `[min_intensity, 1]`.
    pub min_intensity: f64,
}

impl Default for DigitsSpec {
    fn default() -> Self {
        DigitsSpec {
            samples: 10_000,
            seed: 0,
            noise: 0.1,
            min_intensity: 0.7,
        }
    }
}

impl DigitsSpec {
    /// Reads `key = value` lines (samples, seed, noise, min_intensity); missing keys keep their
    /// defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |k: &str, v: &str| Error::Config(format!("{k} = {v:?} is not a valid number"));
        let mut spec = Self::default();
        for (line, k, v) in crate::config::key_values(text)? {
            match k.as_str() {
                "samples" => spec.samples = v.parse().map_err(|_| bad(&k, &v))?,
                "seed" => spec.seed = v.parse().map_err(|_| bad(&k, &v))?,
                "noise" => spec.noise = v.parse().map_err(|_| bad(&k, &v))?,
                "min_intensity" => spec.min_intensity = v.parse().map_err(|_| bad(&k, &v))?,
                _ => return Err(Error::Config(format!("line {line}: unknown key {k:?}"))),
            }
        }
        Ok(spec)
    }
}

/// Renders labeled glyphs with a random placement inside the 8×8 frame,
/// random stroke intensity and Gaussian pixel noise, clamped to [−1, 1].
pub fn gen_synth_digits(spec: &DigitsSpec) -> Result<Dataset> {
    if spec.samples == 0 {
        return Err(Error::invalid("digit dataset needs at least one sample"));
    }
    if !(spec.noise >= 0.0 && (0.0..=1.0).contains(&spec.min_intensity)) {
        return Err(Error::invalid("invalid digit noise or intensity"));
    }
    let mut rng = stream(spec.seed, streams::DATASET);
    let noise = Normal::new(0.0, spec.noise).expect("validated noise");
    let px = DIGIT_SIDE * DIGIT_SIDE;
    let mut data = Vec::with_capacity(spec.samples * px);
    let mut labels = Vec::with_capacity(spec.samples);
    for _ in 0..spec.samples {
        let label = rng.random_range(0..10);
        let dx = rng.random_range(0..=DIGIT_SIDE - GLYPH_W);
        let dy = rng.random_range(0..=DIGIT_SIDE - GLYPH_H);
        let intensity = rng.random_range(spec.min_intensity..=1.0);
        let mut img = vec![-1.0; px];
        for (r, line) in GLYPHS[label].iter().enumerate() {
            for (c, bit) in line.bytes().enumerate() {
                if bit == b'1' {
                    img[(r + dy) * DIGIT_SIDE + c + dx] = -1.0 + 2.0 * intensity;
                }
            }
        }
        for v in &mut img {
            *v = (*v + noise.sample(&mut rng)).clamp(-1.0, 1.0);
        }
        data.extend(img);
        labels.push(label);
    }
    Dataset::new(
        Tensor::new(vec![spec.samples, px], data)?,
        Some(labels),
        Some((DIGIT_SIDE, DIGIT_SIDE)),
        "digits8",
    )
}
