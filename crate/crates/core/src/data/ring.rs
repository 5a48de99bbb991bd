use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, streams};
use crate::tensor::Tensor;

/// Equal-weight isotropic Gaussians evenly spaced on a circle.
#[derive(Clone, Debug, PartialEq)]
pub struct RingMixtureSpec {
    pub modes: usize,
    pub radius: f64,
    pub std: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for RingMixtureSpec {
    fn default() -> Self {
        RingMixtureSpec {
            modes: 8,
            radius: 2.0,
            std: 0.02,
            samples: 10_000,
            seed: 0,
        }
    }
}

impl RingMixtureSpec {
    /// Reads `key = value` lines (modes, radius, std, samples, seed); missing keys keep their
    /// defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |k: &str, v: &str| Error::Config(format!("{k} = {v:?} is not a valid number"));
        let mut spec = Self::default();
        for (line, k, v) in crate::config::key_values(text)? {
            match k.as_str() {
                "modes" => spec.modes = v.parse().map_err(|_| bad(&k, &v))?,
                "radius" => spec.radius = v.parse().map_err(|_| bad(&k, &v))?,
                "std" => spec.std = v.parse().map_err(|_| bad(&k, &v))?,
                "samples" => spec.samples = v.parse().map_err(|_| bad(&k, &v))?,
                "seed" => spec.seed = v.parse().map_err(|_| bad(&k, &v))?,
                _ => return Err(Error::Config(format!("line {line}: unknown key {k:?}"))),
            }
        }
        Ok(spec)
    }
}

impl RingMixtureSpec {
    /// Maps raw coordinates into [−1, 1]²: the ring plus four standard
    /// deviations fits inside the unit box.
    fn scale(&self) -> f64 {
        1.0 / (self.radius + 4.0 * self.std)
    }

    fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(Error::invalid("ring mixture needs at least one mode"));
        }
        if !(self.std > 0.0 && self.radius >= 0.0) {
            return Err(Error::invalid("ring std must be > 0 and radius >= 0"));
        }
        if self.samples == 0 {
            return Err(Error::invalid("ring mixture needs at least one sample"));
        }
        Ok(())
    }
}

/// Mode centers in the rescaled coordinates of [`gen_ring_mixture`].
pub fn ring_centers(spec: &RingMixtureSpec) -> Vec<[f64; 2]> {
    let r = spec.radius * spec.scale();
    (0..spec.modes)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / spec.modes as f64;
            [r * a.cos(), r * a.sin()]
        })
        .collect()
}

/// Draws `spec.samples` points; labels hold the mode index. Values beyond
/// the unit box (more than four deviations out) are clamped.
pub fn gen_ring_mixture(spec: &RingMixtureSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream(spec.seed, streams::DATASET);
    let noise = Normal::new(0.0, spec.std * spec.scale()).expect("validated std");
    let centers = ring_centers(spec);
    let mut data = Vec::with_capacity(spec.samples * 2);
    let mut labels = Vec::with_capacity(spec.samples);
    for _ in 0..spec.samples {
        let k = rng.random_range(0..spec.modes);
        for c in centers[k] {
            data.push((c + noise.sample(&mut rng)).clamp(-1.0, 1.0));
        }
        labels.push(k);
    }
    Dataset::new(
        Tensor::new(vec![spec.samples, 2], data)?,
        Some(labels),
        None,
        format!("ring{}", spec.modes),
    )
}
