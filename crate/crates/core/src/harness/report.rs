//! Reports are a pure function of the score rows, so everything here can
//! be regenerated from a persisted `scores.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{build_histogram, ScoreHistogram};
use crate::trainer::{RunRecord, RunStatus};

pub const HIST_BINS: usize = 32;
/// I′ is bounded only through the posterior clamp (about 18 nats), but
/// desk-scale runs stay well below 16; higher scores land in the top bin.
pub const HIST_RANGE: (f64, f64) = (0.0, 16.0);

const CONFIG_COLUMNS: &[&str] = &[
    "framework",
    "nLayerG",
    "nLayerD",
    "sizeG",
    "sizeD",
    "dropoutD",
    "optimD",
    "optimG",
    "lr",
    "margin",
    "margin_schedule",
    "lambda_pt",
    "latent_dim",
    "batch_size",
    "total_steps",
    "seed",
    "dataset",
];

pub const SCORES_HEADER: &str = "run_id,framework,nLayerG,nLayerD,sizeG,sizeD,dropoutD,optimD,optimG,lr,margin,\
margin_schedule,lambda_pt,latent_dim,batch_size,total_steps,seed,dataset,status,steps_completed,i_prime,mode_coverage";

/// One line of `scores.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub run_id: String,
    /// Values of the config columns, as text.
    pub config: Vec<String>,
    pub status: RunStatus,
    pub steps_completed: u64,
    pub i_prime: Option<f64>,
    pub mode_coverage: Option<f64>,
}

impl ScoreRow {
    pub fn field(&self, column: &str) -> &str {
        let i = CONFIG_COLUMNS
            .iter()
            .position(|c| *c == column)
            .unwrap_or_else(|| panic!("unknown score column {column}"));
        &self.config[i]
    }

    /// `gan`, `ebgan`, or `ebgan-pt` when the pull-away term is on.
    pub fn tag(&self) -> &'static str {
        match (self.field("framework"), self.field("lambda_pt")) {
            ("gan", _) => "gan",
            (_, pt) if pt.parse::<f64>().map_or(true, |v| v != 0.0) => "ebgan-pt",
            _ => "ebgan",
        }
    }

    /// The histogram score: failed runs count as 0.
    pub fn score(&self) -> f64 {
        match self.status {
            RunStatus::Completed => self.i_prime.unwrap_or(0.0),
            RunStatus::Failed => 0.0,
        }
    }

    /// Optimization sub-grid label, e.g. `adam-sgd-0.01`.
    pub fn optim_group(&self) -> String {
        format!("{}-{}-{}", self.field("optimD"), self.field("optimG"), self.field("lr"))
    }

    /// The configuration listing used for best runs.
    pub fn config_line(&self) -> String {
        let f = |c| self.field(c);
        let mut s = format!(
            "nLayerG={}, nLayerD={}, sizeG={}, sizeD={}, dropoutD={}, optimD={}, optimG={}, lr={}",
            f("nLayerG"),
            f("nLayerD"),
            f("sizeG"),
            f("sizeD"),
            if f("dropoutD") == "true" { 1 } else { 0 },
            f("optimD").to_uppercase(),
            f("optimG").to_uppercase(),
            f("lr"),
        );
        if f("framework") == "ebgan" {
            write!(s, ", margin={}", f("margin")).unwrap();
            if self.tag() == "ebgan-pt" {
                write!(s, ", λ_PT={}", f("lambda_pt")).unwrap();
            }
        }
        s
    }

    fn cells(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut cells = vec![self.run_id.clone()];
        cells.extend(self.config.iter().cloned());
        cells.push(status_name(self.status).into());
        cells.push(self.steps_completed.to_string());
        cells.push(opt(self.i_prime));
        cells.push(opt(self.mode_coverage));
        cells
    }
}

fn status_name(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Completed => "completed",
        RunStatus::Failed => "failed",
    }
}

/// Shortest round-trip text, switching to exponent form for very large
/// or small magnitudes so values stay usable in file names.
fn num(v: f64) -> String {
    let plain = v.to_string();
    if plain.len() > 12 {
        format!("{v:e}")
    } else {
        plain
    }
}

/// Pairs each record with its run id.
pub fn score_rows(run_ids: &[String], records: &[RunRecord]) -> Result<Vec<ScoreRow>> {
    if run_ids.len() != records.len() {
        return Err(Error::invalid("one run id per record"));
    }
    run_ids
        .iter()
        .zip(records)
        .map(|(id, r)| {
            let cfg = ExperimentConfig::parse(&r.config)?;
            let config = CONFIG_COLUMNS
                .iter()
                .map(|c| match *c {
                    "framework" => cfg.framework.name().to_string(),
                    "nLayerG" => cfg.n_layer_g.to_string(),
                    "nLayerD" => cfg.n_layer_d.to_string(),
                    "sizeG" => cfg.size_g.to_string(),
                    "sizeD" => cfg.size_d.to_string(),
                    "dropoutD" => cfg.dropout_d.to_string(),
                    "optimD" => cfg.optim_d.name().to_string(),
                    "optimG" => cfg.optim_g.name().to_string(),
                    "lr" => num(cfg.lr),
                    "margin" => num(cfg.margin.initial()),
                    "margin_schedule" => match cfg.margin {
                        crate::objectives::MarginSchedule::Constant { .. } => "constant".to_string(),
                        crate::objectives::MarginSchedule::Linear { decay_end_step, .. } => {
                            format!("linear:{decay_end_step}")
                        }
                    },
                    "lambda_pt" => num(cfg.lambda_pt),
                    "latent_dim" => cfg.effective_latent_dim().to_string(),
                    "batch_size" => cfg.batch_size.to_string(),
                    "total_steps" => cfg.total_steps.to_string(),
                    "seed" => cfg.seed.to_string(),
                    "dataset" => cfg.dataset.clone(),
                    _ => unreachable!(),
                })
                .collect();
            Ok(ScoreRow {
                run_id: id.clone(),
                config,
                status: r.status,
                steps_completed: r.steps_completed,
                i_prime: r.i_prime,
                mode_coverage: r.mode_coverage,
            })
        })
        .collect()
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    let csv_err = |e: csv::Error| Error::parse(path, e.to_string());
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    if reader.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",") != SCORES_HEADER {
        return Err(Error::parse(path, "unexpected scores.csv header"));
    }
    let n = CONFIG_COLUMNS.len();
    reader
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let cells = rec.map_err(csv_err)?;
            let bad = |m: &str| Error::parse(path, format!("row {}: {m}", i + 1));
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad("bad number"))
                }
            };
            Ok(ScoreRow {
                run_id: cells[0].to_string(),
                config: cells.iter().skip(1).take(n).map(String::from).collect(),
                status: match &cells[n + 1] {
                    "completed" => RunStatus::Completed,
                    "failed" => RunStatus::Failed,
                    _ => return Err(bad("bad status")),
                },
                steps_completed: cells[n + 2].parse().map_err(|_| bad("bad step count"))?,
                i_prime: opt(&cells[n + 3])?,
                mode_coverage: opt(&cells[n + 4])?,
            })
        })
        .collect()
}

/// Tags in a fixed presentation order, restricted to those present.
fn tags(rows: &[ScoreRow]) -> Vec<&'static str> {
    ["gan", "ebgan", "ebgan-pt"]
        .into_iter()
        .filter(|t| rows.iter().any(|r| r.tag() == *t))
        .collect()
}

/// Per-tag histograms, then per-tag sub-grids grouped by optimizer pair
/// and learning rate. Names are file stems.
pub fn histograms(rows: &[ScoreRow]) -> Result<Vec<(String, ScoreHistogram)>> {
    let mut out = Vec::new();
    for tag in tags(rows) {
        let mine: Vec<&ScoreRow> = rows.iter().filter(|r| r.tag() == tag).collect();
        let scores: Vec<f64> = mine.iter().map(|r| r.score()).collect();
        out.push((format!("hist_{tag}"), build_histogram(&scores, HIST_BINS, HIST_RANGE, tag)?));
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &mine {
            groups.entry(r.optim_group()).or_default().push(r.score());
        }
        for (group, scores) in groups {
            let name = format!("{tag} {group}");
            out.push((format!("hist_{tag}_{group}"), build_histogram(&scores, HIST_BINS, HIST_RANGE, &name)?));
        }
    }
    Ok(out)
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Distribution summary of one tag's scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub tag: String,
    pub runs: usize,
    pub failed: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Fraction of this tag's runs strictly above the median of all runs.
    pub above_pooled_median: f64,
}

impl Summary {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

pub fn summarize(rows: &[ScoreRow]) -> Vec<Summary> {
    let sorted = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v
    };
    let pooled = quantile(&sorted(rows.iter().map(|r| r.score()).collect()), 0.5);
    tags(rows)
        .into_iter()
        .map(|tag| {
            let mine: Vec<&ScoreRow> = rows.iter().filter(|r| r.tag() == tag).collect();
            let s = sorted(mine.iter().map(|r| r.score()).collect());
            Summary {
                tag: tag.to_string(),
                runs: s.len(),
                failed: mine.iter().filter(|r| r.status == RunStatus::Failed).count(),
                median: quantile(&s, 0.5),
                q1: quantile(&s, 0.25),
                q3: quantile(&s, 0.75),
                above_pooled_median: s.iter().filter(|&&v| v > pooled).count() as f64 / s.len() as f64,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestRun {
    pub tag: String,
    pub run_id: String,
    pub i_prime: f64,
    pub config_line: String,
}

/// Highest I′ per tag among completed runs; ties go to the earliest run
/// id.
pub fn best_runs(rows: &[ScoreRow]) -> Vec<BestRun> {
    let mut best: Vec<BestRun> = Vec::new();
    for tag in tags(rows) {
        let mut pick: Option<(&ScoreRow, f64)> = None;
        for r in rows.iter().filter(|r| r.tag() == tag && r.status == RunStatus::Completed) {
            let Some(v) = r.i_prime else { continue };
            let better = match pick {
                None => true,
                Some((p, pv)) => v > pv || (v == pv && r.run_id < p.run_id),
            };
            if better {
                pick = Some((r, v));
            }
        }
        if let Some((r, v)) = pick {
            best.push(BestRun {
                tag: tag.to_string(),
                run_id: r.run_id.clone(),
                i_prime: v,
                config_line: r.config_line(),
            });
        }
    }
    best
}

/// Writes the histograms, their side-by-side comparison and the summary
/// table. Everything derives from `rows`.
pub fn regenerate_histograms(rows: &[ScoreRow], dir: &Path) -> Result<()> {
    let hists = histograms(rows)?;
    for (name, h) in &hists {
        std::fs::write(dir.join(format!("{name}.csv")), h.to_csv())?;
        std::fs::write(dir.join(format!("{name}.svg")), h.to_svg())?;
    }
    // Framework-level histograms only; sub-grid names carry an underscore.
    let top: Vec<&ScoreHistogram> = hists
        .iter()
        .filter(|(n, _)| !n["hist_".len()..].contains('_'))
        .map(|(_, h)| h)
        .collect();
    let mut cmp = String::from("bin_lo,bin_hi");
    for h in &top {
        write!(cmp, ",{}", h.tag).unwrap();
    }
    cmp.push('\n');
    for b in 0..HIST_BINS {
        let edges = top.first().map(|h| (h.edges[b], h.edges[b + 1]));
        let (lo, hi) = edges.unwrap_or((f64::NAN, f64::NAN));
        write!(cmp, "{lo},{hi}").unwrap();
        for h in &top {
            write!(cmp, ",{}", h.percentages()[b]).unwrap();
        }
        cmp.push('\n');
    }
    if top.is_empty() {
        cmp.truncate("bin_lo,bin_hi\n".len());
    }
    std::fs::write(dir.join("comparison.csv"), cmp)?;

    let mut summary = String::from("tag,runs,failed,median,q1,q3,iqr,above_pooled_median\n");
    for s in summarize(rows) {
        writeln!(
            summary,
            "{},{},{},{},{},{},{},{}",
            s.tag,
            s.runs,
            s.failed,
            s.median,
            s.q1,
            s.q3,
            s.iqr(),
            s.above_pooled_median
        )
        .unwrap();
    }
    std::fs::write(dir.join("summary.csv"), summary)?;
    Ok(())
}

/// Writes `scores.csv`, the histogram files, and for each tag the best
/// run's final sample grid (`best_<tag>.pgm`) and configuration
/// (`best_<tag>.txt`). Run directories are looked up under `dir`.
pub fn report(rows: &[ScoreRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("scores.csv");
    let csv_err = |e: csv::Error| Error::parse(&path, e.to_string());
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(SCORES_HEADER.split(',')).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.cells()).map_err(csv_err)?;
    }
    w.flush()?;
    regenerate_histograms(rows, dir)?;
    for b in best_runs(rows) {
        let grid = dir.join(&b.run_id).join("samples_final.pgm");
        if grid.exists() {
            std::fs::copy(&grid, dir.join(format!("best_{}.pgm", b.tag)))?;
        }
        std::fs::write(
            dir.join(format!("best_{}.txt", b.tag)),
            format!("{} (run {}, I'={})\n", b.config_line, b.run_id, b.i_prime),
        )?;
    }
    Ok(())
}
