//! Sample-quality metrics.
//!
//! The modified inception score is `I′ = E_x KL(p(y) ‖ p(y|x))`, in nats,
//! where `p(y|x)` comes from a proxy classifier and `p(y)` is its average
//! over the sample set. A collapsed generator scores exactly 0.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nets::{Activation, Checkpoint, Dense, Mlp, Pass};
use crate::rng::{stream, streams};
use crate::tensor::{Graph, Tensor};
use crate::trainer::OptimizerState;

/// Posteriors are clamped to at least this before taking logs.
pub const POSTERIOR_CLAMP: f64 = 1e-8;
/// Held-out accuracy the proxy classifier must reach before its scores are
/// used.
pub const ACCURACY_GATE: f64 = 0.97;
/// Mode-coverage defaults, in the rescaled [−1, 1] coordinates.
pub const DEFAULT_COVERAGE_RADIUS: f64 = 0.1;
pub const DEFAULT_COVERAGE_FRAC: f64 = 0.25;

const SUM_TOL: f64 = 1e-9;

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid("probabilities must be finite and >= 0"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::invalid(format!("probabilities sum to {s}")));
    }
    Ok(())
}

/// `Σ p_i ln(p_i / q_i)` with `q` clamped to [`POSTERIOR_CLAMP`]; terms with
/// `p_i = 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid("distributions differ in length"));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    Ok(kl_unchecked(p, q))
}

fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(POSTERIOR_CLAMP)).ln())
        .sum()
}

fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// I′ from a `[n, C]` matrix of per-sample class posteriors.
pub fn modified_inception_score(posteriors: &Tensor) -> Result<f64> {
    if posteriors.shape().len() != 2 || posteriors.rows() == 0 {
        return Err(Error::invalid("need a non-empty [n, C] posterior matrix"));
    }
    let (n, c) = (posteriors.rows(), posteriors.cols());
    let mut columns = vec![Vec::with_capacity(n); c];
    for i in 0..n {
        let row = posteriors.row(i);
        check_distribution(row)?;
        for (col, &v) in columns.iter_mut().zip(row) {
            col.push(v);
        }
    }
    // Sorted sums make the score independent of sample order, bit for bit.
    let marginal: Vec<f64> = columns.into_iter().map(|col| sorted_sum(col) / n as f64).collect();
    let total = sorted_sum((0..n).map(|i| kl_unchecked(&marginal, posteriors.row(i))).collect());
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierSpec {
    pub hidden: usize,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            hidden: 128,
            steps: 3000,
            batch_size: 64,
            lr: 0.001,
            seed: 0,
        }
    }
}

/// Two-layer MLP (`linear → relu → linear → softmax`) over flattened
/// samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyClassifier {
    pub net: Mlp,
}

impl ProxyClassifier {
    pub fn classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Trains with Adam on cross-entropy. Labels must be present.
    pub fn train(data: &Dataset, spec: &ClassifierSpec) -> Result<Self> {
        let labels = data
            .labels()
            .ok_or_else(|| Error::invalid("classifier training needs labels"))?;
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        if classes < 2 {
            return Err(Error::invalid("classifier training needs at least two classes"));
        }
        let mut net = Mlp {
            layers: vec![
                Dense::new(data.dim(), spec.hidden, Activation::Relu),
                Dense::new(spec.hidden, classes, Activation::Identity),
            ],
        };
        let mut rng = stream(spec.seed, streams::CLASSIFIER);
        // He-style scale; the discriminator's tiny initial scale would make
        // this small net train needlessly slowly.
        let std = (2.0 / data.dim() as f64).sqrt();
        net.init(std, &mut rng);
        let mut opt = OptimizerState::adam(spec.lr);
        opt.beta1 = 0.9;
        let mut dropout_rng = stream(spec.seed, streams::DROPOUT);
        for _ in 0..spec.steps {
            let idx: Vec<usize> = (0..spec.batch_size)
                .map(|_| rand::Rng::random_range(&mut rng, 0..data.len()))
                .collect();
            let x = data.samples().select_rows(&idx)?;
            let mut onehot = Tensor::zeros(&[idx.len(), classes]);
            for (r, &i) in idx.iter().enumerate() {
                onehot.data_mut()[r * classes + labels[i]] = 1.0;
            }
            let mut g = Graph::new();
            let params = net.bind(&mut g);
            let xv = g.constant(x);
            let mut pass = Pass {
                training: true,
                rng: &mut dropout_rng,
            };
            let logits = *net.forward(&mut g, &params, xv, &mut pass)?.last().expect("two layers");
            let logp = g.log_softmax(logits)?;
            let t = g.constant(onehot);
            let picked = g.mul(logp, t)?;
            let total = g.sum(picked)?;
            let loss = g.scale(total, -1.0 / idx.len() as f64)?;
            g.backward(loss)?;
            let grads: Vec<Tensor> = params.iter().map(|&v| g.grad(v).expect("leaf")).collect();
            opt.step(net.params_mut(), &grads)?;
        }
        Ok(ProxyClassifier { net })
    }

    /// Class posteriors, `[n, C]`.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "predict_proba",
                lhs: x.shape().to_vec(),
                rhs: vec![x.rows(), self.input_dim()],
            });
        }
        let mut net = self.net.clone();
        let mut g = Graph::new();
        let params: Vec<_> = net.params().into_iter().map(|p| g.constant(p.clone())).collect();
        let xv = g.constant(x.clone());
        let mut rng = stream(0, streams::EVAL);
        let mut pass = Pass {
            training: false,
            rng: &mut rng,
        };
        let logits = *net.forward(&mut g, &params, xv, &mut pass)?.last().expect("two layers");
        let logp = g.log_softmax(logits)?;
        let data = g.value(logp).data().iter().map(|v| v.exp()).collect();
        Tensor::new(vec![x.rows(), self.classes()], data)
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let labels = data
            .labels()
            .ok_or_else(|| Error::invalid("accuracy needs labels"))?;
        let p = self.predict_proba(data.samples())?;
        let correct = (0..p.rows())
            .filter(|&i| {
                let row = p.row(i);
                let arg = (0..row.len())
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                    .expect("non-empty");
                arg == labels[i]
            })
            .count();
        Ok(correct as f64 / p.rows() as f64)
    }

    /// I′ of a batch of samples under this classifier.
    pub fn score(&self, samples: &Tensor) -> Result<f64> {
        modified_inception_score(&self.predict_proba(samples)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::from_mlp("classifier", &self.net).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(ProxyClassifier {
            net: Checkpoint::load(path)?.into_mlp("classifier")?,
        })
    }
}

/// Trains on 80% of `data` and reports held-out accuracy on the rest.
pub fn train_gated_classifier(data: &Dataset, spec: &ClassifierSpec) -> Result<(ProxyClassifier, f64)> {
    let (train, held_out) = data.split(0.8, &mut stream(spec.seed, streams::CLASSIFIER + 100))?;
    let clf = ProxyClassifier::train(&train, spec)?;
    let acc = clf.accuracy(&held_out)?;
    Ok((clf, acc))
}

/// Percent-of-runs histogram over fixed, strictly increasing bin edges.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
    pub tag: String,
}

/// Equal-width bins over `[lo, hi]`; scores outside the range fall into
/// the first or last bin.
pub fn build_histogram(scores: &[f64], bins: usize, range: (f64, f64), tag: &str) -> Result<ScoreHistogram> {
    let (lo, hi) = range;
    if bins == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid("histogram needs bins >= 1 and lo < hi"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("histogram scores must be finite"));
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0; bins];
    for &s in scores {
        let b = (((s - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(ScoreHistogram {
        edges,
        counts,
        total: scores.len(),
        tag: tag.to_string(),
    })
}

impl ScoreHistogram {
    /// Percent of runs per bin; all zero when there are no runs.
    pub fn percentages(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| {
                if self.total == 0 {
                    0.0
                } else {
                    100.0 * c as f64 / self.total as f64
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,percent\n");
        for (i, p) in self.percentages().iter().enumerate() {
            writeln!(s, "{},{},{}", self.edges[i], self.edges[i + 1], p).unwrap();
        }
        s
    }

    /// Bar chart: x axis is the score, y axis the percent of runs.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (480.0, 240.0, 30.0);
        let pct = self.percentages();
        let top = pct.iter().cloned().fold(1.0, f64::max);
        let bar_w = (w - 2.0 * pad) / pct.len() as f64;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
             <text x=\"{pad}\" y=\"16\" font-size=\"12\">{} ({} runs)</text>\n",
            self.tag, self.total
        );
        for (i, p) in pct.iter().enumerate() {
            let bh = (h - 2.0 * pad) * p / top;
            writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\"/>",
                pad + bar_w * i as f64,
                h - pad - bh,
                bar_w * 0.9,
                bh
            )
            .unwrap();
        }
        writeln!(
            s,
            "<line x1=\"{pad}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\"/>\n\
             <text x=\"{pad}\" y=\"{ty}\" font-size=\"10\">{lo}</text>\n\
             <text x=\"{x2}\" y=\"{ty}\" font-size=\"10\" text-anchor=\"end\">{hi}</text>\n</svg>",
            y = h - pad,
            x2 = w - pad,
            ty = h - pad + 14.0,
            lo = self.edges[0],
            hi = self.edges[self.edges.len() - 1],
        )
        .unwrap();
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeCoverage {
    pub covered: usize,
    /// Fraction of samples attributed to each mode.
    pub mass: Vec<f64>,
}

/// Attributes each sample to its nearest center when within `radius`; a
/// mode is covered when its mass reaches `coverage_frac` of the uniform
/// share `1/K`.
pub fn mode_coverage(samples: &Tensor, centers: &[[f64; 2]], radius: f64, coverage_frac: f64) -> Result<ModeCoverage> {
    if samples.shape().len() != 2 || samples.cols() != 2 || samples.rows() == 0 {
        return Err(Error::invalid("mode coverage needs non-empty 2-D samples"));
    }
    if centers.is_empty() || !(radius > 0.0) {
        return Err(Error::invalid("mode coverage needs centers and radius > 0"));
    }
    for (i, a) in centers.iter().enumerate() {
        if centers[..i].contains(a) {
            return Err(Error::invalid("mode centers must be distinct"));
        }
    }
    let mut counts = vec![0usize; centers.len()];
    for i in 0..samples.rows() {
        let p = samples.row(i);
        let (best, d2) = centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        if d2 <= radius * radius {
            counts[best] += 1;
        }
    }
    let n = samples.rows() as f64;
    let mass: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let share = 1.0 / centers.len() as f64;
    let covered = mass.iter().filter(|&&m| m >= coverage_frac * share).count();
    Ok(ModeCoverage { covered, mass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synth_digits, DigitsSpec};

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        let v = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        let expect = 0.5 * (5.0f64 / 9.0).ln() + 0.5 * 5.0f64.ln();
        assert!((v - expect).abs() < 1e-15 && (v - 0.5108).abs() < 1e-4);
        assert!(kl_divergence(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert!(kl_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap().is_finite());
    }

    #[test]
    fn inception_examples() {
        let same = Tensor::from_rows(&vec![vec![0.7, 0.2, 0.1]; 5]).unwrap();
        assert_eq!(modified_inception_score(&same).unwrap(), 0.0);
        let two = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let expect = 0.5 * (5.0f64 / 9.0).ln() + 0.5 * 5.0f64.ln();
        assert!((modified_inception_score(&two).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn histogram_examples() {
        let h = build_histogram(&[], 5, (0.0, 1.0), "x").unwrap();
        assert!(h.counts.iter().all(|&c| c == 0));
        assert!(h.percentages().iter().all(|&p| p == 0.0));
        let h = build_histogram(&[0.33], 5, (0.0, 1.0), "x").unwrap();
        assert_eq!(h.counts, [0, 1, 0, 0, 0]);
        let scores: Vec<f64> = (0..37).map(|i| i as f64 * 0.07 - 0.3).collect();
        let h = build_histogram(&scores, 7, (0.0, 2.0), "x").unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 37);
        assert!((h.percentages().iter().sum::<f64>() - 100.0).abs() < 1e-9);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        assert!(h.to_csv().starts_with("bin_lo,bin_hi,percent\n"));
        assert!(h.to_svg().contains("<rect"));
    }

    #[test]
    fn coverage_examples() {
        let centers = crate::data::ring_centers(&Default::default());
        let all = Tensor::from_rows(&centers.iter().map(|c| c.to_vec()).collect::<Vec<_>>()).unwrap();
        assert_eq!(mode_coverage(&all, &centers, 0.05, 0.25).unwrap().covered, 8);
        let one = Tensor::from_rows(&vec![centers[3].to_vec(); 10]).unwrap();
        let cov = mode_coverage(&one, &centers, 0.05, 0.25).unwrap();
        assert_eq!(cov.covered, 1);
        assert_eq!(cov.mass[3], 1.0);
    }

    #[test]
    fn classifier_passes_accuracy_gate_and_round_trips() {
        let data = gen_synth_digits(&DigitsSpec {
            samples: 5000,
            ..DigitsSpec::default()
        })
        .unwrap();
        let (clf, acc) = train_gated_classifier(&data, &ClassifierSpec::default()).unwrap();
        assert!(acc >= ACCURACY_GATE, "held-out accuracy {acc}");
        let p = clf.predict_proba(&data.samples().select_rows(&[0, 1, 2]).unwrap()).unwrap();
        for i in 0..3 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let dir = tempfile::tempdir().unwrap();
        clf.save(&dir.path().join("c")).unwrap();
        assert_eq!(ProxyClassifier::load(&dir.path().join("c")).unwrap(), clf);
        // Real digits score well above a collapsed set.
        let real = clf.score(data.samples()).unwrap();
        assert!(real > 1.5, "{real}");
    }
}
