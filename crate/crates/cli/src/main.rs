//! `eblab`: train, grid-search, evaluate and verify energy-based GANs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use eblab::config::ExperimentConfig;
use eblab::data::{gen_ring_mixture, gen_synth_digits, load_named, DigitsSpec, RingMixtureSpec};
use eblab::equilibrium::{run_oracle, Suite, DEFAULT_TOL};
use eblab::harness::{evaluate_run, run_grid, seed_override, Evaluator, GridSpec};
use eblab::metrics::{train_gated_classifier, ClassifierSpec, ProxyClassifier, ACCURACY_GATE};
use eblab::trainer::{estimate_margin_for, train_run, RunStatus};

#[derive(Parser)]
#[command(name = "eblab", version, about = "Energy-based GAN laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; without it nothing is written.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Proxy classifier used to score the final generator.
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Run every configuration of a grid spec and write the report.
    Grid {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to a classifier trained on the grid's dataset.
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Check the equilibrium theory on random finite sample spaces.
    Oracle {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score a finished run directory.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Train the config's auto-encoder alone and print its converged energy.
    EstimateMargin {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: u64,
    },
    /// Generate a procedural dataset as CSV.
    MakeData {
        kind: DataKind,
        /// Generator settings as `key = value` lines.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the proxy classifier used for I′.
    TrainClassifier {
        #[arg(long, default_value = "digits")]
        dataset: String,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        dataset_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Lemma1,
    Lemma2,
    Thm1,
    Thm2,
    All,
}

impl SuiteArg {
    fn suite(self) -> Suite {
        match self {
            SuiteArg::Lemma1 => Suite::Lemma1,
            SuiteArg::Lemma2 => Suite::Lemma2,
            SuiteArg::Thm1 => Suite::Theorem1,
            SuiteArg::Thm2 => Suite::Theorem2,
            SuiteArg::All => Suite::All,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Ring,
    Digits,
}

type Res<T> = Result<T, Box<dyn std::error::Error>>;

fn load_config(path: &Path) -> Res<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// A labelled dataset gets a freshly trained classifier, which must pass
/// the accuracy gate.
fn classifier_for(path: Option<&Path>, cfg: &ExperimentConfig, data: &eblab::data::Dataset) -> Res<Option<ProxyClassifier>> {
    if let Some(p) = path {
        return Ok(Some(ProxyClassifier::load(p)?));
    }
    if data.labels().is_none() || cfg.dataset == "ring" {
        return Ok(None);
    }
    let (clf, acc) = train_gated_classifier(data, &ClassifierSpec::default())?;
    if acc < ACCURACY_GATE {
        return Err(format!("proxy classifier reached {acc:.4} held-out accuracy, below the {ACCURACY_GATE} gate").into());
    }
    eprintln!("proxy classifier: held-out accuracy {acc:.4}");
    Ok(Some(clf))
}

fn run(cli: Cli) -> Res<bool> {
    match cli.command {
        Command::Train { config, out, classifier } => {
            let cfg = load_config(&config)?;
            let data = load_named(&cfg.dataset, cfg.dataset_samples, cfg.dataset_seed)?;
            let clf = match &classifier {
                Some(p) => Some(ProxyClassifier::load(p)?),
                None => None,
            };
            let mut outcome = train_run(&cfg, &data, out.as_deref(), &mut |m| {
                if m.step % cfg.log_interval == 0 {
                    eprintln!("{}", m.csv_row());
                }
            })?;
            let mut record = outcome.record;
            if record.status == RunStatus::Completed {
                let (i, c) = Evaluator::new(&cfg.dataset, clf).evaluate(&mut outcome.state.generator, &cfg)?;
                record.i_prime = i;
                record.mode_coverage = c;
                if let Some(dir) = &out {
                    record.save(&dir.join("record"))?;
                }
            }
            println!("{}", serde_json::to_string_pretty(&record)?);
            Ok(record.status == RunStatus::Completed)
        }
        Command::Grid { spec, parallel, out, classifier } => {
            let mut spec = GridSpec::load(&spec)?;
            if let Some(seed) = seed_override()? {
                spec.base.seed = seed;
            }
            let base = &spec.base;
            let data = load_named(&base.dataset, base.dataset_samples, base.dataset_seed)?;
            let clf = classifier_for(classifier.as_deref(), base, &data)?;
            let grid = run_grid(&spec, &data, parallel, &out, &Evaluator::new(&base.dataset, clf))?;
            let failed = grid.records.iter().filter(|r| r.status == RunStatus::Failed).count();
            println!("{} runs, {} failed; report in {}", grid.records.len(), failed, grid.dir.display());
            Ok(failed == 0)
        }
        Command::Oracle { suite, trials, tol, seed } => {
            let summary = run_oracle(suite.suite(), trials, tol, seed)?;
            eprint!("{}", summary.to_text());
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(summary.all_passed)
        }
        Command::Eval { run, classifier } => {
            let cfg = ExperimentConfig::load(&run.join("config"))?;
            let clf = match &classifier {
                Some(p) => Some(ProxyClassifier::load(p)?),
                None => None,
            };
            if clf.is_none() && cfg.dataset != "ring" {
                return Err("--classifier is required for datasets without known mode centers".into());
            }
            let record = evaluate_run(&run, &Evaluator::new(&cfg.dataset, clf))?;
            println!("{}", serde_json::to_string_pretty(&record)?);
            Ok(true)
        }
        Command::EstimateMargin { config, steps } => {
            let cfg = load_config(&config)?;
            let data = load_named(&cfg.dataset, cfg.dataset_samples, cfg.dataset_seed)?;
            let est = estimate_margin_for(&cfg, &data, steps)?;
            println!("{}", est.suggested);
            Ok(true)
        }
        Command::MakeData { kind, spec, out } => {
            let text = match &spec {
                Some(p) => std::fs::read_to_string(p)?,
                None => String::new(),
            };
            let data = match kind {
                DataKind::Ring => gen_ring_mixture(&RingMixtureSpec::parse(&text)?)?,
                DataKind::Digits => gen_synth_digits(&DigitsSpec::parse(&text)?)?,
            };
            data.write_csv(&out)?;
            println!("{} samples of dimension {} written to {}", data.len(), data.dim(), out.display());
            Ok(true)
        }
        Command::TrainClassifier { dataset, samples, dataset_seed, out } => {
            let data = load_named(&dataset, samples, dataset_seed)?;
            let (clf, acc) = train_gated_classifier(&data, &ClassifierSpec::default())?;
            clf.save(&out)?;
            println!("held-out accuracy {acc}");
            Ok(acc >= ACCURACY_GATE)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
