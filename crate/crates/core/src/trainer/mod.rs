//! Alternating discriminator / generator training.
//!
//! One [`TrainState::train_step`] performs a discriminator update on a
//! fresh latent batch followed by a generator update on another fresh
//! latent batch. Data, latent and dropout draws come from independent
//! streams under the run seed, so a run is a pure function of
//! `(config, seed, dataset)`.

mod optim;

pub use optim::{LrSchedule, OptimKind, OptimizerState};

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{write_sample_grid, write_scatter, Dataset};
use crate::error::{Error, Result};
use crate::nets::{
    Checkpoint,
    init_weights, sample_latent, AutoEncoderDiscriminator, Discriminator, GeneratorNet,
    LogisticDiscriminator, Network, Pass, Role,
};
use crate::objectives::{
    ebgan_d_loss, ebgan_g_loss, gan_d_loss, gan_g_loss, margin_at, pull_away_term, Framework,
    ObjectiveConfig, PT_EPS,
};
use crate::rng::{stream, streams, LabRng};
use crate::tensor::{Graph, Tensor, Var};

pub const GENERATOR_CKPT: &str = "generator.ckpt";
pub const DISCRIMINATOR_CKPT: &str = "discriminator.ckpt";

pub const METRICS_HEADER: &str = "step,margin,loss_d,loss_g,e_real,e_fake,f_pt,lr_d,lr_g";

/// What one training step reports. For the logistic baseline `e_real` and
/// `e_fake` hold mean discriminator probabilities and `f_pt` is 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// Zero-based index of the step.
    pub step: u64,
    pub margin: f64,
    pub loss_d: f64,
    /// Generator loss without the pull-away term.
    pub loss_g: f64,
    pub e_real: f64,
    pub e_fake: f64,
    pub f_pt: f64,
    pub lr_d: f64,
    pub lr_g: f64,
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.margin,
            self.loss_d,
            self.loss_g,
            self.e_real,
            self.e_fake,
            self.f_pt,
            self.lr_d,
            self.lr_g
        )
    }
}

/// Builds the generator and discriminator a config describes, uninitialized.
pub fn build_networks(cfg: &ExperimentConfig, data_dim: usize) -> Result<(GeneratorNet, Discriminator)> {
    let generator = GeneratorNet::new(cfg.n_layer_g, cfg.size_g, cfg.effective_latent_dim(), data_dim)?;
    let discriminator = match cfg.framework {
        Framework::Ebgan => Discriminator::AutoEncoder(
            AutoEncoderDiscriminator::new(cfg.n_layer_d, cfg.dec_layers, cfg.size_d, data_dim, cfg.dropout_d)?
                .with_energy_norm(cfg.energy_norm),
        ),
        Framework::Gan => Discriminator::Logistic(LogisticDiscriminator::new(
            cfg.n_layer_d,
            cfg.size_d,
            data_dim,
            cfg.dropout_d,
        )?),
    };
    Ok((generator, discriminator))
}

pub struct TrainState {
    pub generator: GeneratorNet,
    pub discriminator: Discriminator,
    pub opt_d: OptimizerState,
    pub opt_g: OptimizerState,
    pub lr_d: LrSchedule,
    pub lr_g: LrSchedule,
    pub objective: ObjectiveConfig,
    step: u64,
    pub data_rng: LabRng,
    pub latent_rng: LabRng,
    pub dropout_rng: LabRng,
}

impl TrainState {
    /// Assembles a state from already-initialized networks.
    pub fn from_parts(
        generator: GeneratorNet,
        discriminator: Discriminator,
        objective: ObjectiveConfig,
        opt_d: OptimizerState,
        opt_g: OptimizerState,
        seed: u64,
    ) -> Result<Self> {
        objective.validate()?;
        let fits = match (&discriminator, objective.framework) {
            (Discriminator::AutoEncoder(d), Framework::Ebgan) => d.input_dim() == generator.output_dim(),
            (Discriminator::Logistic(d), Framework::Gan) => d.input_dim() == generator.output_dim(),
            _ => false,
        };
        if !fits {
            return Err(Error::Config(
                "discriminator kind or width does not match the generator and framework".into(),
            ));
        }
        Ok(TrainState {
            generator,
            discriminator,
            lr_d: LrSchedule::constant(opt_d.lr),
            lr_g: LrSchedule::constant(opt_g.lr),
            opt_d,
            opt_g,
            objective,
            step: 0,
            data_rng: stream(seed, streams::DATA),
            latent_rng: stream(seed, streams::LATENT),
            dropout_rng: stream(seed, streams::DROPOUT),
        })
    }

    /// Fresh, initialized networks and optimizers for `cfg`.
    pub fn from_config(cfg: &ExperimentConfig, data_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let (mut generator, mut discriminator) = build_networks(cfg, data_dim)?;
        init_weights(&mut generator, Role::Generator, &mut stream(cfg.seed, streams::INIT_G));
        init_weights(&mut discriminator, Role::Discriminator, &mut stream(cfg.seed, streams::INIT_D));
        let opt = |kind, lr| OptimizerState::new(kind, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let mut state = Self::from_parts(
            generator,
            discriminator,
            cfg.objective(),
            opt(cfg.optim_d, cfg.lr_d()),
            opt(cfg.optim_g, cfg.lr_g()),
            cfg.seed,
        )?;
        let schedule = |base| LrSchedule {
            base,
            decay_start: cfg.lr_decay_start,
            total_steps: cfg.total_steps,
        };
        state.lr_d = schedule(cfg.lr_d());
        state.lr_g = schedule(cfg.lr_g());
        Ok(state)
    }

    /// Number of completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// One discriminator update, then one generator update. A non-finite
    /// value anywhere aborts with [`Error::Diverged`]; parameters touched
    /// before the failure keep their last finite values.
    pub fn train_step(&mut self, real: &Tensor) -> Result<StepMetrics> {
        let t = self.step;
        self.step_inner(real).map_err(|e| match e {
            Error::NonFinite { .. } | Error::NegativeEnergy(_) => Error::Diverged {
                step: t,
                reason: e.to_string(),
            },
            other => other,
        })
    }

    fn step_inner(&mut self, real: &Tensor) -> Result<StepMetrics> {
        let t = self.step;
        let n = real.rows();
        if n < 2 {
            return Err(Error::invalid("training batches need at least two rows"));
        }
        let margin = margin_at(&self.objective.margin, t);
        self.opt_d.lr = self.lr_d.at(t);
        self.opt_g.lr = self.lr_g.at(t);
        let latent = self.generator.latent_dim();

        // Discriminator update; the fake batch enters as a constant.
        let z = sample_latent(n, latent, &mut self.latent_rng);
        let fake = self.generator.generate(
            &z,
            &mut Pass {
                training: true,
                rng: &mut self.dropout_rng,
            },
        )?;
        let mut g = Graph::new();
        let dp = self.discriminator.bind(&mut g);
        let xr = g.constant(real.clone());
        let xf = g.constant(fake);
        let mut pass = Pass {
            training: true,
            rng: &mut self.dropout_rng,
        };
        let (loss_d, s_real, s_fake) = match &mut self.discriminator {
            Discriminator::AutoEncoder(d) => {
                let r = d.forward(&mut g, &dp, xr, &mut pass)?.energies;
                let f = d.forward(&mut g, &dp, xf, &mut pass)?.energies;
                (ebgan_d_loss(&mut g, r, f, margin)?, r, f)
            }
            Discriminator::Logistic(d) => {
                let r = d.forward(&mut g, &dp, xr, &mut pass)?;
                let f = d.forward(&mut g, &dp, xf, &mut pass)?;
                (gan_d_loss(&mut g, r, f)?, r, f)
            }
        };
        g.backward(loss_d)?;
        let grads = leaf_grads(&g, &dp);
        let loss_d = g.value(loss_d).data()[0];
        let e_real = g.value(s_real).mean();
        let e_fake = g.value(s_fake).mean();
        self.opt_d.step(self.discriminator.params_mut(), &grads)?;

        // Generator update through the (fixed) discriminator.
        let z = sample_latent(n, latent, &mut self.latent_rng);
        let mut g = Graph::new();
        let gp = self.generator.bind(&mut g);
        let dp: Vec<Var> = self
            .discriminator
            .params()
            .into_iter()
            .map(|p| g.constant(p.clone()))
            .collect();
        let zv = g.constant(z);
        let mut pass = Pass {
            training: true,
            rng: &mut self.dropout_rng,
        };
        let fake = self.generator.forward(&mut g, &gp, zv, &mut pass)?;
        let weight = self.objective.pt_weight;
        let (loss_g, total, f_pt) = match &mut self.discriminator {
            Discriminator::AutoEncoder(d) => {
                let out = d.forward(&mut g, &dp, fake, &mut pass)?;
                let lg = ebgan_g_loss(&mut g, out.energies)?;
                let pt = pull_away_term(&mut g, out.representations, PT_EPS)?;
                let total = if weight > 0.0 {
                    let scaled = g.scale(pt, weight)?;
                    g.add(lg, scaled)?
                } else {
                    lg
                };
                (lg, total, g.value(pt).data()[0])
            }
            Discriminator::Logistic(d) => {
                let p = d.forward(&mut g, &dp, fake, &mut pass)?;
                let lg = gan_g_loss(&mut g, p)?;
                (lg, lg, 0.0)
            }
        };
        g.backward(total)?;
        let grads = leaf_grads(&g, &gp);
        let loss_g = g.value(loss_g).data()[0];
        self.opt_g.step(self.generator.params_mut(), &grads)?;

        self.step += 1;
        Ok(StepMetrics {
            step: t,
            margin,
            loss_d,
            loss_g,
            e_real,
            e_fake,
            f_pt,
            lr_d: self.opt_d.lr,
            lr_g: self.opt_g.lr,
        })
    }

    /// Generator samples in inference mode (batch-norm running statistics).
    pub fn sample(&mut self, z: &Tensor) -> Result<Tensor> {
        // Inference draws no randomness; the stream only satisfies `Pass`.
        let mut rng = stream(0, streams::EVAL);
        self.generator.generate(
            z,
            &mut Pass {
                training: false,
                rng: &mut rng,
            },
        )
    }
}

fn leaf_grads(g: &Graph, leaves: &[Var]) -> Vec<Tensor> {
    leaves
        .iter()
        .map(|&v| g.grad(v).expect("bound parameters are leaves"))
        .collect()
}

/// Settings for training the auto-encoder alone on reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginSearch {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// The estimate averages this many final losses.
    pub window: usize,
    pub seed: u64,
}

impl Default for MarginSearch {
    fn default() -> Self {
        MarginSearch {
            steps: 2000,
            batch_size: 64,
            lr: 0.001,
            window: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginEstimate {
    /// Window-averaged final reconstruction energy.
    pub suggested: f64,
    /// Mean batch energy at every step.
    pub losses: Vec<f64>,
}

/// Trains a freshly initialized copy of `ae` to reconstruct `data` and
/// reports the mean energy it settles at, a starting point for choosing
/// the margin.
pub fn estimate_margin(
    ae: &AutoEncoderDiscriminator,
    data: &Dataset,
    search: &MarginSearch,
) -> Result<MarginEstimate> {
    if data.is_empty() || search.steps == 0 || search.window == 0 {
        return Err(Error::invalid("margin estimation needs data, steps and a window"));
    }
    let mut ae = ae.clone();
    init_weights(&mut ae, Role::Discriminator, &mut stream(search.seed, streams::INIT_D));
    let mut opt = OptimizerState::adam(search.lr);
    let mut data_rng = stream(search.seed, streams::DATA);
    let mut dropout_rng = stream(search.seed, streams::DROPOUT);
    let mut losses = Vec::with_capacity(search.steps as usize);
    for step in 0..search.steps {
        let batch = data.sample_batch(search.batch_size, &mut data_rng)?;
        let diverged = |e: Error| Error::Diverged {
            step,
            reason: e.to_string(),
        };
        let mut g = Graph::new();
        let params = ae.bind(&mut g);
        let x = g.constant(batch);
        let mut pass = Pass {
            training: true,
            rng: &mut dropout_rng,
        };
        let out = ae.forward(&mut g, &params, x, &mut pass).map_err(diverged)?;
        let loss = g.mean(out.energies).map_err(diverged)?;
        g.backward(loss)?;
        let grads = leaf_grads(&g, &params);
        losses.push(g.value(loss).data()[0]);
        opt.step(ae.params_mut(), &grads).map_err(diverged)?;
    }
    let tail = &losses[losses.len().saturating_sub(search.window)..];
    Ok(MarginEstimate {
        suggested: tail.iter().sum::<f64>() / tail.len() as f64,
        losses,
    })
}

/// [`estimate_margin`] for the auto-encoder a config describes.
pub fn estimate_margin_for(
    cfg: &ExperimentConfig,
    data: &Dataset,
    steps: u64,
) -> Result<MarginEstimate> {
    let ae = AutoEncoderDiscriminator::new(cfg.n_layer_d, cfg.dec_layers, cfg.size_d, data.dim(), cfg.dropout_d)?
        .with_energy_norm(cfg.energy_norm);
    estimate_margin(
        &ae,
        data,
        &MarginSearch {
            steps,
            batch_size: cfg.batch_size,
            lr: cfg.lr_d(),
            seed: cfg.seed,
            ..MarginSearch::default()
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// Persistent summary of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub status: RunStatus,
    pub failure: Option<String>,
    pub seed: u64,
    pub steps_completed: u64,
    /// Config in its text format.
    pub config: String,
    pub metrics_path: Option<String>,
    pub samples: Vec<String>,
    pub final_metrics: Option<StepMetrics>,
    /// Filled in by evaluation.
    pub i_prime: Option<f64>,
    pub mode_coverage: Option<f64>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub struct RunOutcome {
    pub record: RunRecord,
    pub state: TrainState,
}

/// Samples shown in a snapshot: a 10×10 grid for image data, 1000 points
/// for 2-D data.
fn snapshot_count(data: &Dataset) -> Option<usize> {
    match (data.image_shape(), data.dim()) {
        (Some(_), _) => Some(100),
        (None, 2) => Some(1000),
        _ => None,
    }
}

fn write_snapshot(state: &mut TrainState, data: &Dataset, z: &Tensor, path: &Path) -> Result<()> {
    let samples = state.sample(z)?;
    match data.image_shape() {
        Some(shape) => write_sample_grid(&samples, shape, 10, 10, path).map(drop),
        None => write_scatter(&samples, 256, path).map(drop),
    }
}

/// Runs `cfg.total_steps` training steps on `data`.
///
/// With an output directory the run writes `config`, `metrics.csv` (one
/// row every `log_interval` steps and after the last step), sample
/// snapshots `samples_init.pgm`, `samples_<step>.pgm`, `samples_final.pgm`,
/// the final networks (`generator.ckpt`, `discriminator.ckpt`) and `record`. Divergence does not return an error: the outcome carries a
/// record flagged failed, with everything logged up to that point.
pub fn train_run(
    cfg: &ExperimentConfig,
    data: &Dataset,
    out_dir: Option<&Path>,
    observer: &mut dyn FnMut(&StepMetrics),
) -> Result<RunOutcome> {
    let started = Instant::now();
    let mut state = TrainState::from_config(cfg, data.dim())?;
    let eval_z = snapshot_count(data).map(|n| {
        sample_latent(n, state.generator.latent_dim(), &mut stream(cfg.seed, streams::EVAL))
    });
    let mut record = RunRecord {
        status: RunStatus::Completed,
        failure: None,
        seed: cfg.seed,
        steps_completed: 0,
        config: cfg.to_text(),
        metrics_path: None,
        samples: Vec::new(),
        final_metrics: None,
        i_prime: None,
        mode_coverage: None,
        wall_clock_secs: 0.0,
    };

    let mut csv = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("config"), &record.config)?;
            let mut w = BufWriter::new(File::create(dir.join("metrics.csv"))?);
            writeln!(w, "{METRICS_HEADER}")?;
            record.metrics_path = Some("metrics.csv".into());
            Some(w)
        }
        None => None,
    };
    let snapshot = |state: &mut TrainState, record: &mut RunRecord, name: String| -> Result<()> {
        if let (Some(dir), Some(z)) = (out_dir, &eval_z) {
            write_snapshot(state, data, z, &dir.join(&name))?;
            record.samples.push(name);
        }
        Ok(())
    };
    snapshot(&mut state, &mut record, "samples_init.pgm".into())?;

    let mut pending = String::new();
    for t in 0..cfg.total_steps {
        let batch = data.sample_batch(cfg.batch_size, &mut state.data_rng)?;
        let metrics = match state.train_step(&batch) {
            Ok(m) => m,
            Err(e @ Error::Diverged { .. }) => {
                record.status = RunStatus::Failed;
                record.failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        observer(&metrics);
        if t % cfg.log_interval == 0 || t + 1 == cfg.total_steps {
            writeln!(pending, "{}", metrics.csv_row()).unwrap();
        }
        record.steps_completed = t + 1;
        record.final_metrics = Some(metrics);
        if cfg.snapshot_interval > 0 && (t + 1) % cfg.snapshot_interval == 0 && t + 1 < cfg.total_steps {
            snapshot(&mut state, &mut record, format!("samples_{}.pgm", t + 1))?;
        }
        if let Some(w) = &mut csv {
            if pending.len() > 1 << 16 {
                w.write_all(pending.as_bytes())?;
                pending.clear();
            }
        }
    }
    if let Some(mut w) = csv {
        w.write_all(pending.as_bytes())?;
        w.flush()?;
    }
    if record.status == RunStatus::Completed && cfg.total_steps > 0 {
        snapshot(&mut state, &mut record, "samples_final.pgm".into())?;
    }
    record.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        Checkpoint::from(&state.generator).save(&dir.join(GENERATOR_CKPT))?;
        Checkpoint::from(&state.discriminator).save(&dir.join(DISCRIMINATOR_CKPT))?;
        record.save(&dir.join("record"))?;
    }
    Ok(RunOutcome { record, state })
}
