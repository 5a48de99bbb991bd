use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{report, GridPoint, GridSpec};
use crate::config::ExperimentConfig;
use crate::data::{ring_centers, Dataset, RingMixtureSpec};
use crate::error::{Error, Result};
use crate::metrics::{mode_coverage, ProxyClassifier, DEFAULT_COVERAGE_FRAC, DEFAULT_COVERAGE_RADIUS};
use crate::nets::{sample_latent, Checkpoint, GeneratorNet, Pass};
use crate::rng::{stream, streams};
use crate::trainer::{train_run, RunRecord, RunStatus, GENERATOR_CKPT};

/// Runs are trained in `<run-id>.tmp` and renamed into place when done.
pub const TMP_SUFFIX: &str = ".tmp";

/// Scores a trained generator: I′ under a proxy classifier and, for the
/// ring toy, mode coverage.
#[derive(Clone, Debug, Default)]
pub struct Evaluator {
    pub classifier: Option<ProxyClassifier>,
    pub centers: Option<Vec<[f64; 2]>>,
    pub radius: f64,
    pub coverage_frac: f64,
}

impl Evaluator {
    /// Coverage is measured only for the built-in ring dataset, whose
    /// centers are known.
    pub fn new(dataset: &str, classifier: Option<ProxyClassifier>) -> Self {
        Evaluator {
            classifier,
            centers: (dataset == "ring").then(|| ring_centers(&RingMixtureSpec::default())),
            radius: DEFAULT_COVERAGE_RADIUS,
            coverage_frac: DEFAULT_COVERAGE_FRAC,
        }
    }

    /// Draws `cfg.eval_samples` inference-mode samples from the evaluation
    /// stream of `cfg.seed` and scores them.
    pub fn evaluate(&self, generator: &mut GeneratorNet, cfg: &ExperimentConfig) -> Result<(Option<f64>, Option<f64>)> {
        let mut rng = stream(cfg.seed, streams::EVAL);
        let z = sample_latent(cfg.eval_samples, generator.latent_dim(), &mut rng);
        let samples = generator.generate(
            &z,
            &mut Pass {
                training: false,
                rng: &mut rng,
            },
        )?;
        if samples.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "generator samples" });
        }
        let i_prime = match &self.classifier {
            Some(c) => Some(c.score(&samples)?),
            None => None,
        };
        let coverage = match &self.centers {
            Some(centers) if samples.cols() == 2 => {
                Some(mode_coverage(&samples, centers, self.radius, self.coverage_frac)?.covered as f64)
            }
            _ => None,
        };
        Ok((i_prime, coverage))
    }
}

/// Scores a finished run directory from its config and generator
/// checkpoint and rewrites its record.
pub fn evaluate_run(dir: &Path, evaluator: &Evaluator) -> Result<RunRecord> {
    let mut record = RunRecord::load(&dir.join("record"))?;
    if record.status != RunStatus::Completed {
        return Err(Error::Config(format!(
            "{}: run failed ({}), nothing to evaluate",
            dir.display(),
            record.failure.as_deref().unwrap_or("no diagnostic")
        )));
    }
    let cfg = ExperimentConfig::parse(&record.config)?;
    let mut generator = GeneratorNet::try_from(Checkpoint::load(&dir.join(GENERATOR_CKPT))?)?;
    let (i_prime, coverage) = evaluator.evaluate(&mut generator, &cfg)?;
    record.i_prime = i_prime.or(record.i_prime);
    record.mode_coverage = coverage.or(record.mode_coverage);
    record.save(&dir.join("record"))?;
    Ok(record)
}

/// Everything a finished grid produced.
#[derive(Debug)]
pub struct GridRun {
    pub dir: PathBuf,
    pub points: Vec<GridPoint>,
    pub records: Vec<RunRecord>,
}

impl GridRun {
    pub fn all_completed(&self) -> bool {
        self.records.iter().all(|r| r.status == RunStatus::Completed)
    }
}

fn failed_record(cfg: &ExperimentConfig, why: String) -> RunRecord {
    RunRecord {
        status: RunStatus::Failed,
        failure: Some(why),
        seed: cfg.seed,
        steps_completed: 0,
        config: cfg.to_text(),
        metrics_path: None,
        samples: Vec::new(),
        final_metrics: None,
        i_prime: None,
        mode_coverage: None,
        wall_clock_secs: 0.0,
    }
}

/// Trains, scores and persists one grid point. Never fails: problems end
/// up in the record.
fn execute(point: &GridPoint, data: &Dataset, grid_dir: &Path, evaluator: &Evaluator) -> RunRecord {
    let tmp = grid_dir.join(format!("{}{TMP_SUFFIX}", point.run_id));
    let done = grid_dir.join(&point.run_id);
    let attempt = || -> Result<RunRecord> {
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp)?;
        }
        let mut record = match train_run(&point.config, data, Some(&tmp), &mut |_| {}) {
            Ok(mut out) => {
                if out.record.status == RunStatus::Completed {
                    match evaluator.evaluate(&mut out.state.generator, &point.config) {
                        Ok((i, c)) => {
                            out.record.i_prime = i;
                            out.record.mode_coverage = c;
                        }
                        Err(e) => {
                            out.record.status = RunStatus::Failed;
                            out.record.failure = Some(format!("evaluation: {e}"));
                        }
                    }
                }
                out.record
            }
            Err(e) => {
                std::fs::create_dir_all(&tmp)?;
                std::fs::write(tmp.join("config"), point.config.to_text())?;
                failed_record(&point.config, e.to_string())
            }
        };
        record.save(&tmp.join("record"))?;
        if done.exists() {
            std::fs::remove_dir_all(&done)?;
        }
        std::fs::rename(&tmp, &done)?;
        // Keep the in-memory copy identical to what a reload sees.
        record = RunRecord::load(&done.join("record"))?;
        Ok(record)
    };
    attempt().unwrap_or_else(|e| failed_record(&point.config, format!("harness: {e}")))
}

/// Executes every grid point on `parallelism` worker threads, then writes
/// the grid spec and the report into `<out>/<grid-id>/`.
///
/// Each run is a pure function of its config, so results do not depend on
/// scheduling. Run failures are recorded; only problems with the grid
/// directory itself are errors.
pub fn run_grid(
    spec: &GridSpec,
    data: &Dataset,
    parallelism: usize,
    out: &Path,
    evaluator: &Evaluator,
) -> Result<GridRun> {
    if parallelism == 0 {
        return Err(Error::invalid("parallelism must be at least 1"));
    }
    let points = spec.expand()?;
    let dir = out.join(&spec.id);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("grid"), spec.to_text())?;

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; points.len()]);
    std::thread::scope(|s| {
        for _ in 0..parallelism.min(points.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(point) = points.get(i) else { break };
                let record = execute(point, data, &dir, evaluator);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(record);
            });
        }
    });
    let records: Vec<RunRecord> = slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every point executed"))
        .collect();

    let ids: Vec<String> = points.iter().map(|p| p.run_id.clone()).collect();
    report(&report::score_rows(&ids, &records)?, &dir)?;
    Ok(GridRun { dir, points, records })
}
