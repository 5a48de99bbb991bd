//! Experiment configuration and its flat `key = value` text format.
//!
//! ```text
//! # EBGAN on synthetic digits
//! framework = ebgan
//! nLayerG = 3
//! nLayerD = 2
//! margin = 10
//! lambda_pt = 0.1
//! ```
//!
//! Keys are case-sensitive; `#` starts a comment; unknown or repeated keys
//! are errors; omitted keys take their defaults. The Table-1 style keys
//! (`nLayerG`, `nLayerD`, `sizeG`, `sizeD`, `dropoutD`, `optimD`, `optimG`,
//! `lr`) keep their customary spelling.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::EnergyNorm;
use crate::objectives::{Framework, MarginSchedule, ObjectiveConfig};
use crate::trainer::OptimKind;

/// Which value sets are legal when a config is part of a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GridProfile {
    /// Free-standing run; only structural validation applies.
    #[default]
    None,
    /// The published grid's value sets.
    Table1,
    /// Scaled-down value sets that run on a laptop.
    Desk,
}

pub struct LegalValues {
    pub n_layer: &'static [usize],
    pub size_g: &'static [usize],
    pub size_d: &'static [usize],
    pub lr: &'static [f64],
}

impl GridProfile {
    pub fn name(self) -> &'static str {
        match self {
            GridProfile::None => "none",
            GridProfile::Table1 => "table1",
            GridProfile::Desk => "desk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => GridProfile::None,
            "table1" => GridProfile::Table1,
            "desk" => GridProfile::Desk,
            _ => return None,
        })
    }

    pub fn legal(self) -> Option<LegalValues> {
        match self {
            GridProfile::None => None,
            GridProfile::Table1 => Some(LegalValues {
                n_layer: &[2, 3, 4, 5],
                size_g: &[400, 800, 1600, 3200],
                size_d: &[128, 256, 512, 1024],
                lr: &[0.01, 0.001, 0.0001],
            }),
            GridProfile::Desk => Some(LegalValues {
                n_layer: &[2, 3, 4, 5],
                size_g: &[32, 64, 128, 256],
                size_d: &[32, 64, 128, 256],
                lr: &[0.01, 0.001, 0.0001],
            }),
        }
    }
}

/// Learning rate fixed for energy-based runs inside a grid.
pub const EBGAN_GRID_LR: f64 = 0.001;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub framework: Framework,
    pub n_layer_g: usize,
    pub n_layer_d: usize,
    /// Decoder depth of the auto-encoder; only 1 is accepted.
    pub dec_layers: usize,
    pub size_g: usize,
    pub size_d: usize,
    pub dropout_d: bool,
    pub optim_d: OptimKind,
    pub optim_g: OptimKind,
    pub lr: f64,
    /// Generator learning rate when it differs from `lr`.
    pub lr_g: Option<f64>,
    /// Fraction of `total_steps` after which learning rates decay linearly
    /// to zero.
    pub lr_decay_start: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub margin: MarginSchedule,
    pub lambda_pt: f64,
    pub energy_norm: EnergyNorm,
    /// `None` picks 8 for 2-D toy data and 100 otherwise.
    pub latent_dim: Option<usize>,
    pub batch_size: usize,
    pub total_steps: u64,
    pub log_interval: u64,
    /// 0 disables intermediate sample snapshots.
    pub snapshot_interval: u64,
    pub eval_samples: usize,
    pub seed: u64,
    /// `digits`, `ring`, `csv:<path>` or `idx:<images>,<labels>`.
    pub dataset: String,
    pub dataset_samples: usize,
    /// Seed for procedurally generated datasets, independent of `seed` so
    /// that every run of a grid sees the same data.
    pub dataset_seed: u64,
    pub grid: GridProfile,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            framework: Framework::Ebgan,
            n_layer_g: 3,
            n_layer_d: 3,
            dec_layers: 1,
            size_g: 128,
            size_d: 128,
            dropout_d: false,
            optim_d: OptimKind::Adam,
            optim_g: OptimKind::Adam,
            lr: 0.001,
            lr_g: None,
            lr_decay_start: None,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            margin: MarginSchedule::Constant { m0: 10.0 },
            lambda_pt: 0.0,
            energy_norm: EnergyNorm::Euclidean,
            latent_dim: None,
            batch_size: 64,
            total_steps: 2000,
            log_interval: 50,
            snapshot_interval: 0,
            eval_samples: 1000,
            seed: 0,
            dataset: "digits".into(),
            dataset_samples: 10_000,
            dataset_seed: 0,
            grid: GridProfile::None,
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn bad(key: &str, value: &str, expected: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {expected}"))
}

/// Parses one value with `FromStr`, naming the key on failure.
fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, "a number"))
}

/// Splits a config text into `(line, key, value)` triples.
pub(crate) fn key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if out.iter().any(|(_, seen, _)| *seen == k) {
            return Err(Error::Config(format!("line {}: duplicate key {k}", i + 1)));
        }
        out.push((i + 1, k, v));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            framework: self.framework,
            margin: self.margin,
            pt_weight: self.lambda_pt,
        }
    }

    pub fn effective_latent_dim(&self) -> usize {
        self.latent_dim
            .unwrap_or(if self.dataset == "ring" { 8 } else { 100 })
    }

    pub fn lr_d(&self) -> f64 {
        self.lr
    }

    pub fn lr_g(&self) -> f64 {
        self.lr_g.unwrap_or(self.lr)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "framework" => {
                self.framework =
                    Framework::parse(value).ok_or_else(|| bad(key, value, "ebgan or gan"))?
            }
            "nLayerG" => self.n_layer_g = num(key, value)?,
            "nLayerD" => self.n_layer_d = num(key, value)?,
            "dec_layers" => self.dec_layers = num(key, value)?,
            "sizeG" => self.size_g = num(key, value)?,
            "sizeD" => self.size_d = num(key, value)?,
            "dropoutD" => {
                self.dropout_d = parse_bool(value).ok_or_else(|| bad(key, value, "true or false"))?
            }
            "optimD" => {
                self.optim_d = OptimKind::parse(value).ok_or_else(|| bad(key, value, "adam or sgd"))?
            }
            "optimG" => {
                self.optim_g = OptimKind::parse(value).ok_or_else(|| bad(key, value, "adam or sgd"))?
            }
            "lr" => self.lr = num(key, value)?,
            "lr_g" => self.lr_g = Some(num(key, value)?),
            "lr_decay_start" => self.lr_decay_start = Some(num(key, value)?),
            "adam_beta1" => self.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.adam_beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "margin" => {
                let m: f64 = num(key, value)?;
                self.margin = match self.margin {
                    MarginSchedule::Constant { .. } => MarginSchedule::Constant { m0: m },
                    MarginSchedule::Linear { decay_end_step, .. } => MarginSchedule::Linear {
                        m0: m,
                        decay_end_step,
                    },
                };
            }
            "margin_schedule" => {
                let m0 = self.margin.initial();
                self.margin = match value {
                    "constant" => MarginSchedule::Constant { m0 },
                    "linear" => MarginSchedule::Linear {
                        m0,
                        decay_end_step: match self.margin {
                            MarginSchedule::Linear { decay_end_step, .. } => decay_end_step,
                            MarginSchedule::Constant { .. } => self.total_steps.max(1),
                        },
                    },
                    _ => return Err(bad(key, value, "constant or linear")),
                };
            }
            "margin_decay_end" => {
                let end: u64 = num(key, value)?;
                self.margin = MarginSchedule::Linear {
                    m0: self.margin.initial(),
                    decay_end_step: end,
                };
            }
            "lambda_pt" => self.lambda_pt = num(key, value)?,
            "energy_norm" => {
                self.energy_norm =
                    EnergyNorm::parse(value).ok_or_else(|| bad(key, value, "euclidean or squared"))?
            }
            "latent_dim" => self.latent_dim = Some(num(key, value)?),
            "batch_size" => self.batch_size = num(key, value)?,
            "total_steps" => self.total_steps = num(key, value)?,
            "log_interval" => self.log_interval = num(key, value)?,
            "snapshot_interval" => self.snapshot_interval = num(key, value)?,
            "eval_samples" => self.eval_samples = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "dataset" => self.dataset = value.to_string(),
            "dataset_samples" => self.dataset_samples = num(key, value)?,
            "dataset_seed" => self.dataset_seed = num(key, value)?,
            "grid" => {
                self.grid =
                    GridProfile::parse(value).ok_or_else(|| bad(key, value, "none, table1 or desk"))?
            }
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses the text format and validates the result. Keys are applied in
    /// file order, except that `margin_schedule` and `margin_decay_end` are
    /// applied after `margin` and `total_steps` so that any ordering works.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = Self::parse_unchecked(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// [`ExperimentConfig::parse`] without the final validation, for grid
    /// bases whose axis keys are filled in later.
    pub(crate) fn parse_unchecked(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut kvs = key_values(text)?;
        let rank = |k: &str| match k {
            "margin_schedule" => 1,
            "margin_decay_end" => 2,
            _ => 0,
        };
        kvs.sort_by_key(|(line, k, _)| (rank(k), *line));
        for (line, k, v) in kvs {
            cfg.set(&k, &v)
                .map_err(|e| Error::Config(format!("line {line}: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    /// Writes every key, in a fixed order, so that `parse(to_text())`
    /// reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("framework", self.framework.name().into());
        kv("nLayerG", self.n_layer_g.to_string());
        kv("nLayerD", self.n_layer_d.to_string());
        kv("dec_layers", self.dec_layers.to_string());
        kv("sizeG", self.size_g.to_string());
        kv("sizeD", self.size_d.to_string());
        kv("dropoutD", self.dropout_d.to_string());
        kv("optimD", self.optim_d.name().into());
        kv("optimG", self.optim_g.name().into());
        kv("lr", self.lr.to_string());
        if let Some(v) = self.lr_g {
            kv("lr_g", v.to_string());
        }
        if let Some(v) = self.lr_decay_start {
            kv("lr_decay_start", v.to_string());
        }
        kv("adam_beta1", self.adam_beta1.to_string());
        kv("adam_beta2", self.adam_beta2.to_string());
        kv("adam_eps", self.adam_eps.to_string());
        kv("margin", self.margin.initial().to_string());
        match self.margin {
            MarginSchedule::Constant { .. } => kv("margin_schedule", "constant".into()),
            MarginSchedule::Linear { decay_end_step, .. } => {
                kv("margin_schedule", "linear".into());
                kv("margin_decay_end", decay_end_step.to_string());
            }
        }
        kv("lambda_pt", self.lambda_pt.to_string());
        kv("energy_norm", self.energy_norm.name().into());
        if let Some(v) = self.latent_dim {
            kv("latent_dim", v.to_string());
        }
        kv("batch_size", self.batch_size.to_string());
        kv("total_steps", self.total_steps.to_string());
        kv("log_interval", self.log_interval.to_string());
        kv("snapshot_interval", self.snapshot_interval.to_string());
        kv("eval_samples", self.eval_samples.to_string());
        kv("seed", self.seed.to_string());
        kv("dataset", self.dataset.clone());
        kv("dataset_samples", self.dataset_samples.to_string());
        kv("dataset_seed", self.dataset_seed.to_string());
        kv("grid", self.grid.name().into());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_layer_g == 0 {
            return err("nLayerG must be >= 1".into());
        }
        if self.dec_layers != 1 {
            return err(format!(
                "dec_layers = {}: the auto-encoder decoder must be one layer",
                self.dec_layers
            ));
        }
        let min_d = if self.framework == Framework::Ebgan { 2 } else { 1 };
        if self.n_layer_d < min_d {
            return err(format!("nLayerD must be >= {min_d}"));
        }
        if self.size_g == 0 || self.size_d == 0 || self.batch_size < 2 {
            return err("sizes must be positive and batch_size >= 2".into());
        }
        if self.latent_dim == Some(0) || self.eval_samples == 0 || self.dataset_samples == 0 {
            return err("latent_dim, eval_samples and dataset_samples must be positive".into());
        }
        for (name, v) in [("lr", self.lr), ("lr_g", self.lr_g())] {
            if !(v.is_finite() && v >= 0.0) {
                return err(format!("{name} must be finite and >= 0"));
            }
        }
        if let Some(f) = self.lr_decay_start {
            if !(0.0..=1.0).contains(&f) {
                return err("lr_decay_start must lie in [0, 1]".into());
            }
        }
        if !((0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0)
        {
            return err("adam betas must lie in [0, 1) and eps be positive".into());
        }
        self.objective().validate()?;
        if self.log_interval == 0 {
            return err("log_interval must be positive".into());
        }

        let Some(legal) = self.grid.legal() else {
            return Ok(());
        };
        let profile = self.grid.name();
        let check = |name: &str, v: usize, set: &[usize]| {
            if set.contains(&v) {
                Ok(())
            } else {
                err(format!("{name} = {v} is not legal in the {profile} grid; legal values: {set:?}"))
            }
        };
        check("nLayerG", self.n_layer_g, legal.n_layer)?;
        check("nLayerD", self.n_layer_d, legal.n_layer)?;
        check("sizeG", self.size_g, legal.size_g)?;
        check("sizeD", self.size_d, legal.size_d)?;
        if !legal.lr.contains(&self.lr) || self.lr_g.is_some() {
            return err(format!(
                "lr = {} is not legal in the {profile} grid; legal values: {:?}",
                self.lr, legal.lr
            ));
        }
        if self.framework == Framework::Ebgan
            && (self.optim_d != OptimKind::Adam
                || self.optim_g != OptimKind::Adam
                || self.lr != EBGAN_GRID_LR)
        {
            return err(format!(
                "energy-based grid runs use adam for both networks with lr = {EBGAN_GRID_LR}"
            ));
        }
        Ok(())
    }
}
