//! Training objectives.
//!
//! The energy-based discriminator minimizes `E[D(x)] + E[[m − D(G(z))]⁺]`
//! and the generator minimizes `E[D(G(z))]`, optionally plus a weighted
//! pull-away term on the encoder representations of its own samples. The
//! logistic baseline uses the usual cross-entropy pair with the
//! non-saturating generator loss.
//!
//! Graph-level functions build differentiable losses; the `*_value`
//! helpers evaluate the same code path on plain slices.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Norm-scale smoothing for the pull-away term during training, where a
/// dead ReLU layer can produce all-zero representation rows.
pub const PT_EPS: f64 = 1e-12;
/// Probabilities are clamped into `[GAN_CLAMP, 1 - GAN_CLAMP]` before logs.
pub const GAN_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Framework {
    Ebgan,
    Gan,
}

impl Framework {
    pub fn name(self) -> &'static str {
        match self {
            Framework::Ebgan => "ebgan",
            Framework::Gan => "gan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ebgan" => Some(Framework::Ebgan),
            "gan" => Some(Framework::Gan),
            _ => None,
        }
    }
}

/// Margin `m` as a function of the training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MarginSchedule {
    Constant { m0: f64 },
    /// `m0 · max(0, 1 − step / decay_end_step)`
    Linear { m0: f64, decay_end_step: u64 },
}

impl MarginSchedule {
    pub fn initial(&self) -> f64 {
        match *self {
            MarginSchedule::Constant { m0 } | MarginSchedule::Linear { m0, .. } => m0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m0 = self.initial();
        if !(m0.is_finite() && m0 >= 0.0) {
            return Err(Error::Config(format!("margin must be finite and >= 0, got {m0}")));
        }
        if let MarginSchedule::Linear { decay_end_step: 0, .. } = self {
            return Err(Error::Config("margin decay_end_step must be positive".into()));
        }
        Ok(())
    }
}

pub fn margin_at(schedule: &MarginSchedule, step: u64) -> f64 {
    match *schedule {
        MarginSchedule::Constant { m0 } => m0,
        MarginSchedule::Linear { m0, decay_end_step } => {
            if step >= decay_end_step {
                0.0
            } else {
                m0 * (1.0 - step as f64 / decay_end_step as f64)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub framework: Framework,
    pub margin: MarginSchedule,
    pub pt_weight: f64,
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pt_weight.is_finite() && self.pt_weight >= 0.0) {
            return Err(Error::Config(format!(
                "lambda_pt must be >= 0, got {}",
                self.pt_weight
            )));
        }
        self.margin.validate()
    }
}

fn check_energies(g: &Graph, e: Var) -> Result<()> {
    match g.value(e).data().iter().find(|&&v| v < 0.0) {
        Some(&v) => Err(Error::NegativeEnergy(v)),
        None => Ok(()),
    }
}

/// Batch mean of `[m − e_fake]⁺`.
pub fn hinge_term(g: &mut Graph, e_fake: Var, m: f64) -> Result<Var> {
    let neg = g.scale(e_fake, -1.0)?;
    let gap = g.add_scalar(neg, m)?;
    let h = g.relu(gap)?;
    g.mean(h)
}

/// `mean(e_real) + mean([m − e_fake]⁺)`.
pub fn ebgan_d_loss(g: &mut Graph, e_real: Var, e_fake: Var, m: f64) -> Result<Var> {
    if !(m >= 0.0) {
        return Err(Error::invalid(format!("margin must be >= 0, got {m}")));
    }
    check_energies(g, e_real)?;
    check_energies(g, e_fake)?;
    let real = g.mean(e_real)?;
    let hinge = hinge_term(g, e_fake, m)?;
    g.add(real, hinge)
}

/// `mean(e_fake)`.
pub fn ebgan_g_loss(g: &mut Graph, e_fake: Var) -> Result<Var> {
    check_energies(g, e_fake)?;
    g.mean(e_fake)
}

/// Mean squared cosine similarity over ordered pairs of distinct rows of
/// `s` (`[N, d]`, N ≥ 2).
///
/// With `eps == 0` an all-zero row is an error; with `eps > 0` each
/// squared cosine is computed as `(sᵢ·sⱼ)² / (‖sᵢ‖²‖sⱼ‖² + eps²)`, which
/// sends zero rows to zero similarity.
pub fn pull_away_term(g: &mut Graph, s: Var, eps: f64) -> Result<Var> {
    let shape = g.value(s).shape().to_vec();
    let [n, _] = shape[..] else {
        return Err(Error::ShapeMismatch {
            op: "pull_away_term",
            lhs: shape,
            rhs: vec![],
        });
    };
    if n < 2 {
        return Err(Error::invalid("pull-away term needs at least two rows"));
    }
    let st = g.transpose(s)?;
    let gram = g.matmul(s, st)?;
    let sq_norms = g.diagonal(gram)?;
    if eps == 0.0 {
        if let Some(i) = g.value(sq_norms).data().iter().position(|&v| v == 0.0) {
            return Err(Error::ZeroNormRow(i));
        }
    }
    let col = g.reshape(sq_norms, &[n, 1])?;
    let row = g.reshape(sq_norms, &[1, n])?;
    let mut denom = g.matmul(col, row)?;
    if eps > 0.0 {
        denom = g.add_scalar(denom, eps * eps)?;
    }
    let off = g.zero_diagonal(gram)?;
    let num = g.mul(off, off)?;
    let cos2 = g.div(num, denom)?;
    // Collinear rows can round one ulp above 1; the gradient there is zero anyway.
    let cos2 = g.clamp(cos2, 0.0, 1.0)?;
    let total = g.sum(cos2)?;
    // Dividing (rather than scaling by the reciprocal) keeps the all-equal
    // case at exactly 1.
    let pairs = g.constant(Tensor::scalar((n * (n - 1)) as f64));
    g.div(total, pairs)
}

fn clamped_neg_log(g: &mut Graph, p: Var) -> Result<Var> {
    let c = g.clamp(p, GAN_CLAMP, 1.0 - GAN_CLAMP)?;
    let l = g.ln(c)?;
    g.scale(l, -1.0)
}

fn check_probs(g: &Graph, p: Var) -> Result<()> {
    match g.value(p).data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::invalid(format!("probability {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// `mean(−ln p_real − ln(1 − p_fake))`.
pub fn gan_d_loss(g: &mut Graph, p_real: Var, p_fake: Var) -> Result<Var> {
    check_probs(g, p_real)?;
    check_probs(g, p_fake)?;
    let real = clamped_neg_log(g, p_real)?;
    let neg = g.scale(p_fake, -1.0)?;
    let one_minus = g.add_scalar(neg, 1.0)?;
    let fake = clamped_neg_log(g, one_minus)?;
    let a = g.mean(real)?;
    let b = g.mean(fake)?;
    g.add(a, b)
}

/// Non-saturating generator loss `mean(−ln p_fake)`.
pub fn gan_g_loss(g: &mut Graph, p_fake: Var) -> Result<Var> {
    check_probs(g, p_fake)?;
    let l = clamped_neg_log(g, p_fake)?;
    g.mean(l)
}

fn eval1(values: &[&[f64]], f: impl FnOnce(&mut Graph, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let vars = values
        .iter()
        .map(|v| {
            if v.is_empty() {
                Err(Error::invalid("empty batch"))
            } else {
                Ok(g.constant(Tensor::vector(v.to_vec())))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).data()[0])
}

pub fn ebgan_d_loss_value(e_real: &[f64], e_fake: &[f64], m: f64) -> Result<f64> {
    eval1(&[e_real, e_fake], |g, v| ebgan_d_loss(g, v[0], v[1], m))
}

pub fn ebgan_g_loss_value(e_fake: &[f64]) -> Result<f64> {
    eval1(&[e_fake], |g, v| ebgan_g_loss(g, v[0]))
}

pub fn gan_d_loss_value(p_real: &[f64], p_fake: &[f64]) -> Result<f64> {
    eval1(&[p_real, p_fake], |g, v| gan_d_loss(g, v[0], v[1]))
}

pub fn gan_g_loss_value(p_fake: &[f64]) -> Result<f64> {
    eval1(&[p_fake], |g, v| gan_g_loss(g, v[0]))
}

/// Exact (unsmoothed) pull-away term of a representation batch.
pub fn pull_away_value(s: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let sv = g.constant(s.clone());
    let out = pull_away_term(&mut g, sv, 0.0)?;
    Ok(g.value(out).data()[0])
}
