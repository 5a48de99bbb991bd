//! Grid search: spec parsing, expansion, parallel execution and reports.
//!
//! A grid spec is the config text format with three extras: `grid_id`,
//! `seeds` (replicates per configuration) and comma-separated value lists
//! on the axis keys in [`AXES`]; a single value is a plain setting, except
//! for `nLayer`, which sets both depths at once. Axes
//! expand in the order they are declared, the first one varying slowest,
//! with replicate seeds innermost.

mod margin;
mod report;
mod runner;

pub use margin::{search_margin, MarginCandidate, MarginChoice, MarginLadder};
pub use report::{
    best_runs, histograms, load_scores, regenerate_histograms, report, score_rows, summarize, BestRun,
    ScoreRow, Summary, HIST_BINS, HIST_RANGE, SCORES_HEADER,
};
pub use runner::{evaluate_run, run_grid, Evaluator, GridRun, TMP_SUFFIX};

use crate::config::{key_values, ExperimentConfig, GridProfile};
use crate::error::{Error, Result};
use crate::objectives::Framework;

/// Keys that may carry a comma-separated list of values.
pub const AXES: &[&str] = &[
    "framework",
    "nLayer",
    "nLayerG",
    "nLayerD",
    "sizeG",
    "sizeD",
    "dropoutD",
    "optimD",
    "optimG",
    "lr",
    "margin",
    "lambda_pt",
];

/// Environment variable that replaces every config's base seed.
pub const SEED_ENV: &str = "EBLAB_SEED";

/// Reads `EBLAB_SEED`; unset means no override.
pub fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV} = {v:?} is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("{SEED_ENV}: {e}"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub id: String,
    /// Replicates per configuration; replicate `r` trains with seed
    /// `base.seed + r`.
    pub seeds: u64,
    pub base: ExperimentConfig,
    /// `(key, values)` in declaration order.
    pub axes: Vec<(String, Vec<String>)>,
}

/// One expanded grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub run_id: String,
    pub config: ExperimentConfig,
}

impl GridSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut id = None;
        let mut seeds = 1;
        let mut base_text = String::new();
        let mut axes = Vec::new();
        for (line, k, v) in key_values(text)? {
            let at = |e: Error| Error::Config(format!("line {line}: {e}"));
            match k.as_str() {
                "grid_id" => id = Some(v),
                "seeds" => {
                    seeds = v
                        .parse()
                        .ok()
                        .filter(|&s| s > 0)
                        .ok_or_else(|| at(Error::Config(format!("seeds = {v:?}: expected a positive integer"))))?
                }
                key if AXES.contains(&key) && (key == "nLayer" || v.contains(',')) => {
                    let values: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
                    if values.iter().any(|s| s.is_empty()) {
                        return Err(at(Error::Config(format!("{key}: empty value in list {v:?}"))));
                    }
                    axes.push((k, values));
                }
                _ => base_text.push_str(&format!("{k} = {v}\n")),
            }
        }
        let id = id.ok_or_else(|| Error::Config("grid spec needs a grid_id".into()))?;
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(Error::Config(format!("grid_id {id:?} is not a plain directory name")));
        }
        let base = ExperimentConfig::parse_unchecked(&base_text)?;
        let spec = GridSpec { id, seeds, base, axes };
        // Surface illegal axis values now rather than mid-grid.
        spec.expand()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    /// The published grid: both depths, both widths and dropout for the
    /// energy-based model, plus optimizers and learning rate for the
    /// baseline.
    pub fn table1(framework: Framework) -> Self {
        let mut axes = vec![
            ("nLayerG", "2,3,4,5"),
            ("nLayerD", "2,3,4,5"),
            ("sizeG", "400,800,1600,3200"),
            ("sizeD", "128,256,512,1024"),
            ("dropoutD", "true,false"),
        ];
        if framework == Framework::Gan {
            axes.extend([("optimD", "adam,sgd"), ("optimG", "adam,sgd"), ("lr", "0.01,0.001,0.0001")]);
        }
        GridSpec {
            id: format!("table1-{}", framework.name()),
            seeds: 1,
            base: ExperimentConfig {
                framework,
                grid: GridProfile::Table1,
                ..ExperimentConfig::default()
            },
            axes: axes.into_iter().map(|(k, v)| (k.to_string(), v.split(',').map(String::from).collect())).collect(),
        }
    }

    /// The desk-scale default: tied depth 2 or 3, widths 64 or 128, five
    /// replicates.
    pub fn desk(framework: Framework) -> Self {
        GridSpec {
            id: format!("desk-{}", framework.name()),
            seeds: 5,
            base: ExperimentConfig {
                framework,
                grid: GridProfile::Desk,
                ..ExperimentConfig::default()
            },
            axes: [("nLayer", "2,3"), ("sizeG", "64,128"), ("sizeD", "64,128")]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.split(',').map(String::from).collect()))
                .collect(),
        }
    }

    /// Product of the axis lengths times the replicate count.
    pub fn size(&self) -> usize {
        self.axes.iter().map(|(_, v)| v.len()).product::<usize>() * self.seeds as usize
    }

    /// Every configuration, validated, in the documented order.
    pub fn expand(&self) -> Result<Vec<GridPoint>> {
        let total = self.size();
        let mut out = Vec::with_capacity(total);
        let mut index = vec![0usize; self.axes.len()];
        for n in 0..total / self.seeds as usize {
            let mut cfg = self.base.clone();
            for ((key, values), &i) in self.axes.iter().zip(&index) {
                let keys: &[&str] = if key == "nLayer" { &["nLayerG", "nLayerD"] } else { &[key.as_str()] };
                for k in keys {
                    cfg.set(k, &values[i])?;
                }
            }
            for r in 0..self.seeds {
                let config = ExperimentConfig {
                    seed: self.base.seed + r,
                    ..cfg.clone()
                };
                config.validate().map_err(|e| {
                    Error::Config(format!("grid point {}: {e}", n * self.seeds as usize + r as usize))
                })?;
                out.push(GridPoint {
                    run_id: format!("run-{:05}", out.len()),
                    config,
                });
            }
            // Odometer step, last axis fastest.
            for d in (0..index.len()).rev() {
                index[d] += 1;
                if index[d] < self.axes[d].1.len() {
                    break;
                }
                index[d] = 0;
            }
        }
        debug_assert_eq!(out.len(), total);
        Ok(out)
    }

    /// Serializes back to the spec format.
    pub fn to_text(&self) -> String {
        let mut s = format!("grid_id = {}\nseeds = {}\n", self.id, self.seeds);
        for (k, v) in &self.axes {
            s.push_str(&format!("{k} = {}\n", v.join(",")));
        }
        for line in self.base.to_text().lines() {
            let key = line.split('=').next().unwrap_or("").trim();
            if !self.axes.iter().any(|(k, _)| k == key || (k == "nLayer" && key.starts_with("nLayer"))) {
                s.push_str(line);
                s.push('\n');
            }
        }
        s
    }
}
