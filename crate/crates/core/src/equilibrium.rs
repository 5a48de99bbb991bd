//! Exact equilibrium analysis on a finite sample space.
//!
//! With densities `p_data`, `p_G` over `K` points and a non-negative
//! discriminator `D`, the discriminator objective is
//! `V = Σ_k p_data(k)·D_k + p_G(k)·[m − D_k]⁺` and the generator objective
//! is `U = Σ_k p_G(k)·D_k`. `V` is separable, so its minimum over `D` is a
//! per-point minimization of `φ(y) = a·y + b·[m − y]⁺`, which is attained
//! at `y = m` when `a < b` and at `y = 0` otherwise.
//!
//! The checks here verify that `min_D V = m` exactly when the two densities
//! agree, and that under agreement every constant discriminator in `[0, m]`
//! is a best response that leaves the generator indifferent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-12;
/// Largest sample space accepted by the check operations.
pub const MAX_CHECK_POINTS: usize = 16;
/// Largest sample space for the exhaustive product-space search; the grid
/// has `(m / step + 1)^K` cells.
pub const MAX_PRODUCT_POINTS: usize = 4;
const MAX_PRODUCT_CELLS: usize = 50_000_000;
const MAX_GRID_VALUES: usize = 1_000_000;

/// Probability vector over `K` points.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDensity {
    probs: Vec<f64>,
}

impl DiscreteDensity {
    /// Entries must be finite, non-negative and sum to 1 within 1e−12.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("density needs at least one point"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("density entries must be finite and >= 0"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("density sums to {total}, not 1")));
        }
        Ok(DiscreteDensity { probs })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("density needs at least one point"));
        }
        Ok(DiscreteDensity {
            probs: vec![1.0 / k as f64; k],
        })
    }

    /// Random density; each point is dropped from the support with
    /// probability `zero_prob`, keeping at least one point.
    pub fn random<R: Rng + ?Sized>(k: usize, zero_prob: f64, rng: &mut R) -> Self {
        assert!(k > 0, "density needs at least one point");
        let mut w: Vec<f64> = (0..k)
            .map(|_| {
                if rng.random::<f64>() < zero_prob {
                    0.0
                } else {
                    -(1.0 - rng.random::<f64>()).ln()
                }
            })
            .collect();
        if w.iter().all(|&v| v == 0.0) {
            w[rng.random_range(0..k)] = 1.0;
        }
        let total: f64 = w.iter().sum();
        DiscreteDensity {
            probs: w.into_iter().map(|v| v / total).collect(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Non-negative discriminator values, one per point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDiscriminator {
    values: Vec<f64>,
}

impl DiscreteDiscriminator {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("discriminator values must be finite and >= 0"));
        }
        Ok(DiscreteDiscriminator { values })
    }

    pub fn constant(k: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhiMin {
    pub y: f64,
    pub value: f64,
    /// False when every `y ∈ [0, m]` (a = b) or every `y ≥ m` (a = 0)
    /// minimizes too.
    pub unique: bool,
}

fn phi(a: f64, b: f64, m: f64, y: f64) -> f64 {
    a * y + b * (m - y).max(0.0)
}

/// Minimizer of `a·y + b·[m − y]⁺` over `y ≥ 0`. Ties resolve to 0.
pub fn phi_argmin(a: f64, b: f64, m: f64) -> Result<PhiMin> {
    if !(a >= 0.0 && b >= 0.0 && m > 0.0 && a.is_finite() && b.is_finite() && m.is_finite()) {
        return Err(Error::invalid("phi_argmin needs a, b >= 0 and m > 0"));
    }
    let y = if a < b { m } else { 0.0 };
    Ok(PhiMin {
        y,
        value: phi(a, b, m, y),
        unique: a != b && a != 0.0,
    })
}

fn check_k(p: &DiscreteDensity, q: &DiscreteDensity) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "densities over {} and {} points",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

fn check_margin(m: f64) -> Result<()> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::invalid("margin must be finite and > 0"));
    }
    Ok(())
}

pub fn discrete_v(
    p_data: &DiscreteDensity,
    p_g: &DiscreteDensity,
    d: &DiscreteDiscriminator,
    m: f64,
) -> Result<f64> {
    check_k(p_data, p_g)?;
    if d.values.len() != p_data.len() {
        return Err(Error::invalid("discriminator and densities differ in size"));
    }
    Ok((0..d.values.len())
        .map(|k| phi(p_data.probs[k], p_g.probs[k], m, d.values[k]))
        .sum())
}

pub fn discrete_u(p_g: &DiscreteDensity, d: &DiscreteDiscriminator) -> Result<f64> {
    if d.values.len() != p_g.len() {
        return Err(Error::invalid("discriminator and density differ in size"));
    }
    Ok(p_g.probs.iter().zip(&d.values).map(|(p, v)| p * v).sum())
}

/// Pointwise minimizer of `V`: `m` where `p_data < p_G`, else 0.
pub fn best_response_d(
    p_data: &DiscreteDensity,
    p_g: &DiscreteDensity,
    m: f64,
) -> Result<DiscreteDiscriminator> {
    check_k(p_data, p_g)?;
    check_margin(m)?;
    let values = p_data
        .probs
        .iter()
        .zip(&p_g.probs)
        .map(|(&a, &b)| phi_argmin(a, b, m).map(|r| r.y))
        .collect::<Result<_>>()?;
    DiscreteDiscriminator::new(values)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BruteForce {
    pub v_min: f64,
    pub argmin: DiscreteDiscriminator,
    /// Minimum from the full product-space search, for `K ≤ 4`.
    pub product_v_min: Option<f64>,
}

/// `{0, step, 2·step, …}` below `m`, then `m` itself.
fn grid(m: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("grid step must be finite and > 0"));
    }
    let n = (m / step).ceil();
    if n + 1.0 > MAX_GRID_VALUES as f64 {
        return Err(Error::Infeasible(format!("{n} grid values per point")));
    }
    let mut values: Vec<f64> = (0..n as usize).map(|i| i as f64 * step).filter(|&v| v < m).collect();
    values.push(m);
    Ok(values)
}

/// Exhaustive minimization of `V` over discriminators whose values lie on a
/// grid over `[0, m]`. Separable per-point search always; the full product
/// search as well when `K ≤ 4`.
pub fn brute_force_min_v(
    p_data: &DiscreteDensity,
    p_g: &DiscreteDensity,
    m: f64,
    grid_step: f64,
) -> Result<BruteForce> {
    check_k(p_data, p_g)?;
    check_margin(m)?;
    let k = p_data.len();
    if k > MAX_CHECK_POINTS {
        return Err(Error::Infeasible(format!("{k} points; the limit is {MAX_CHECK_POINTS}")));
    }
    let values = grid(m, grid_step)?;
    let mut argmin = Vec::with_capacity(k);
    let mut v_min = 0.0;
    for i in 0..k {
        let (a, b) = (p_data.probs[i], p_g.probs[i]);
        let (best_y, best) = values
            .iter()
            .map(|&y| (y, phi(a, b, m, y)))
            .fold((0.0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
        argmin.push(best_y);
        v_min += best;
    }

    let product_v_min = if k <= MAX_PRODUCT_POINTS {
        let cells = values.len().checked_pow(k as u32).unwrap_or(usize::MAX);
        if cells > MAX_PRODUCT_CELLS {
            return Err(Error::Infeasible(format!(
                "{cells} product cells; coarsen the grid step"
            )));
        }
        let mut idx = vec![0usize; k];
        let mut best = f64::INFINITY;
        loop {
            let v: f64 = (0..k)
                .map(|i| phi(p_data.probs[i], p_g.probs[i], m, values[idx[i]]))
                .sum();
            best = best.min(v);
            let mut pos = 0;
            while pos < k {
                idx[pos] += 1;
                if idx[pos] < values.len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == k {
                break;
            }
        }
        Some(best)
    } else {
        None
    };

    Ok(BruteForce {
        v_min,
        argmin: DiscreteDiscriminator::new(argmin)?,
        product_v_min,
    })
}

/// Outcome of the brute-force check that `min_D V = m` if and only if the
/// densities agree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    /// `V` at the best response.
    pub v: f64,
    /// `U` at the best response.
    pub u: f64,
    pub best_response: DiscreteDiscriminator,
    /// Best response is constant over the support of `p_data`.
    pub constant_gamma: bool,
    pub densities_equal: bool,
    pub v_equals_m: bool,
    /// `(V = m) ⇔ (p_data = p_G)` held within tolerance.
    pub iff_holds: bool,
    /// Both sides of the equivalence hold: an equilibrium was certified.
    pub equilibrium_certified: bool,
    /// Best-response values all lie in `{0, m}`.
    pub two_valued: bool,
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn check_size(p: &DiscreteDensity) -> Result<()> {
    if p.len() > MAX_CHECK_POINTS {
        return Err(Error::Infeasible(format!(
            "{} points; the limit is {MAX_CHECK_POINTS}",
            p.len()
        )));
    }
    Ok(())
}

pub fn check_theorem1(
    p_data: &DiscreteDensity,
    p_g: &DiscreteDensity,
    m: f64,
    tol: f64,
) -> Result<EquilibriumReport> {
    check_k(p_data, p_g)?;
    check_size(p_data)?;
    let d = best_response_d(p_data, p_g, m)?;
    let v = discrete_v(p_data, p_g, &d, m)?;
    let u = discrete_u(p_g, &d)?;
    let densities_equal = p_data
        .probs
        .iter()
        .zip(&p_g.probs)
        .all(|(a, b)| (a - b).abs() <= tol);
    let v_equals_m = close(v, m, tol);
    let support: Vec<f64> = p_data
        .probs
        .iter()
        .zip(&d.values)
        .filter(|(p, _)| **p > 0.0)
        .map(|(_, v)| *v)
        .collect();
    let constant_gamma = support.windows(2).all(|w| w[0] == w[1]);
    let two_valued = d.values.iter().all(|&v| v == 0.0 || v == m);
    Ok(EquilibriumReport {
        v,
        u,
        constant_gamma,
        densities_equal,
        v_equals_m,
        iff_holds: v_equals_m == densities_equal,
        equilibrium_certified: v_equals_m && densities_equal,
        two_valued,
        best_response: d,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaCheck {
    pub gamma: f64,
    pub v: f64,
    pub u: f64,
    /// `V(D ≡ γ) = m`, matching the minimum.
    pub best_response: bool,
    /// No perturbed generator density lowered `U` below `γ`.
    pub generator_indifferent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub v_min: f64,
    pub gammas: Vec<GammaCheck>,
    pub certified: bool,
}

/// Number of evenly spaced γ values tried in `[0, m]`.
pub const GAMMA_SAMPLES: usize = 11;

/// With `p_G = p_data`, checks that each `D ≡ γ` on the support of
/// `p_data` (γ at 11 evenly spaced values in `[0, m]`) attains `V = m` and
/// that no generator density — drawn from `perturbations` — achieves
/// `U < γ`. Off the support `D` is set to `m`: the constancy requirement
/// does not apply there.
pub fn check_theorem2(
    p_data: &DiscreteDensity,
    m: f64,
    tol: f64,
    perturbations: &[DiscreteDensity],
) -> Result<Theorem2Report> {
    check_size(p_data)?;
    check_margin(m)?;
    let v_min = discrete_v(p_data, p_data, &best_response_d(p_data, p_data, m)?, m)?;
    let mut gammas = Vec::with_capacity(GAMMA_SAMPLES);
    for i in 0..GAMMA_SAMPLES {
        let gamma = if i + 1 == GAMMA_SAMPLES {
            m
        } else {
            m * i as f64 / (GAMMA_SAMPLES - 1) as f64
        };
        let d = DiscreteDiscriminator::new(
            p_data
                .probs
                .iter()
                .map(|&p| if p > 0.0 { gamma } else { m })
                .collect(),
        )?;
        let v = discrete_v(p_data, p_data, &d, m)?;
        let u = discrete_u(p_data, &d)?;
        let mut indifferent = close(u, gamma, tol);
        for q in perturbations {
            check_k(p_data, q)?;
            indifferent &= discrete_u(q, &d)? >= gamma - tol * gamma.max(1.0);
        }
        gammas.push(GammaCheck {
            gamma,
            v,
            u,
            best_response: close(v, m, tol) && close(v, v_min, tol),
            generator_indifferent: indifferent,
        });
    }
    let certified = close(v_min, m, tol)
        && gammas
            .iter()
            .all(|g| g.best_response && g.generator_indifferent);
    Ok(Theorem2Report {
        v_min,
        gammas,
        certified,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lemma2Report {
    /// Points where `p < q`.
    pub less: usize,
    /// Points where `p ≠ q`.
    pub differ: usize,
    /// Both counts are zero or both are non-zero.
    pub equivalent: bool,
}

pub fn lemma2_check(p: &DiscreteDensity, q: &DiscreteDensity) -> Result<Lemma2Report> {
    check_k(p, q)?;
    let pairs = || p.probs.iter().zip(&q.probs);
    let less = pairs().filter(|(a, b)| a < b).count();
    let differ = pairs().filter(|(a, b)| a != b).count();
    Ok(Lemma2Report {
        less,
        differ,
        equivalent: (less == 0) == (differ == 0),
    })
}

/// Which statements a randomized sweep exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Lemma1,
    Lemma2,
    Theorem1,
    Theorem2,
    All,
}

impl Suite {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "lemma1" => Suite::Lemma1,
            "lemma2" => Suite::Lemma2,
            "thm1" => Suite::Theorem1,
            "thm2" => Suite::Theorem2,
            "all" => Suite::All,
            _ => return None,
        })
    }

    fn members(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![Suite::Lemma1, Suite::Lemma2, Suite::Theorem1, Suite::Theorem2],
            s => vec![s],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lemma1 => "lemma1",
            Suite::Lemma2 => "lemma2",
            Suite::Theorem1 => "thm1",
            Suite::Theorem2 => "thm2",
            Suite::All => "all",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    pub trials: usize,
    pub passed: usize,
    /// The first few failing instances, described.
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub seed: u64,
    pub tol: f64,
    pub results: Vec<SuiteResult>,
    pub all_passed: bool,
}

impl OracleSummary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            let verdict = if r.passed == r.trials { "certified" } else { "FAILED" };
            s += &format!("{:<7} {:>7}/{:<7} {verdict}\n", r.suite, r.passed, r.trials);
            for f in &r.failures {
                s += &format!("        {f}\n");
            }
        }
        s
    }
}

const MAX_REPORTED_FAILURES: usize = 5;

fn trial(suite: Suite, rng: &mut impl Rng, tol: f64) -> Result<Option<String>> {
    let k = rng.random_range(1..=8);
    let m = rng.random_range(0.5..32.0);
    let p = DiscreteDensity::random(k, 0.2, rng);
    let q = if rng.random::<f64>() < 0.3 {
        p.clone()
    } else {
        DiscreteDensity::random(k, 0.2, rng)
    };
    Ok(match suite {
        Suite::Lemma1 => {
            // Random weights with frequent ties, against a fine grid.
            let pick = |rng: &mut dyn rand::RngCore| match rng.random_range(0..4) {
                0 => 0.0,
                1 => 0.5,
                _ => rng.random::<f64>(),
            };
            let (a, b) = (pick(rng), pick(rng));
            let r = phi_argmin(a, b, m)?;
            let grid_min = grid(m, m / 1000.0)?
                .into_iter()
                .map(|y| phi(a, b, m, y))
                .fold(f64::INFINITY, f64::min);
            let ok = (r.y == 0.0 || r.y == m)
                && close(r.value, grid_min, tol)
                && r.value <= phi(a, b, m, 2.0 * m) + tol;
            (!ok).then(|| format!("a={a} b={b} m={m}: y*={} φ={} grid min {grid_min}", r.y, r.value))
        }
        Suite::Lemma2 => {
            let r = lemma2_check(&p, &q)?;
            (!r.equivalent).then(|| format!("p={:?} q={:?}: {r:?}", p.probs, q.probs))
        }
        Suite::Theorem1 => {
            let r = check_theorem1(&p, &q, m, tol)?;
            let bf = brute_force_min_v(&p, &q, m, m / 16.0)?;
            let separable = bf.product_v_min.is_none_or(|v| close(v, bf.v_min, tol));
            let ok = r.iff_holds
                && r.two_valued
                && close(r.v, bf.v_min, tol)
                && separable
                && r.v <= m * (1.0 + tol);
            (!ok).then(|| format!("p={:?} q={:?} m={m}: {r:?} brute {bf:?}", p.probs, q.probs))
        }
        Suite::Theorem2 => {
            let perturb: Vec<DiscreteDensity> =
                (0..8).map(|_| DiscreteDensity::random(k, 0.3, rng)).collect();
            let r = check_theorem2(&p, m, tol, &perturb)?;
            (!r.certified).then(|| format!("p={:?} m={m}: {r:?}", p.probs))
        }
        Suite::All => unreachable!("expanded by run_oracle"),
    })
}

/// Randomized certification sweep: `trials` random instances per member
/// suite, drawn from a seeded stream.
pub fn run_oracle(suite: Suite, trials: usize, tol: f64, seed: u64) -> Result<OracleSummary> {
    let mut results = Vec::new();
    for (i, s) in suite.members().into_iter().enumerate() {
        let mut rng = crate::rng::stream(seed, 100 + i as u64);
        let mut passed = 0;
        let mut failures = Vec::new();
        for _ in 0..trials {
            match trial(s, &mut rng, tol)? {
                None => passed += 1,
                Some(f) if failures.len() < MAX_REPORTED_FAILURES => failures.push(f),
                Some(_) => {}
            }
        }
        results.push(SuiteResult {
            suite: s.name().into(),
            trials,
            passed,
            failures,
        });
    }
    let all_passed = results.iter().all(|r| r.passed == r.trials);
    Ok(OracleSummary {
        seed,
        tol,
        results,
        all_passed,
    })
}
