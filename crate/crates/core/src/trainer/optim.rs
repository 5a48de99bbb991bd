use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OptimKind {
    Adam,
    Sgd,
}

impl OptimKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimKind::Adam => "adam",
            OptimKind::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Some(OptimKind::Adam),
            "sgd" => Some(OptimKind::Sgd),
            _ => None,
        }
    }
}

/// Per-network optimizer with bias-corrected Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
}

impl OptimizerState {
    /// Moments are allocated lazily on the first step, shaped like the
    /// parameters passed then.
    pub fn new(kind: OptimKind, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        OptimizerState {
            kind,
            lr,
            beta1,
            beta2,
            eps,
            m: Vec::new(),
            v: Vec::new(),
            steps: 0,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimKind::Sgd, lr, 0.5, 0.999, 1e-8)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimKind::Adam, lr, 0.5, 0.999, 1e-8)
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. Nothing is written unless every new value is
    /// finite.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    op: "optimizer_step",
                });
            }
        }
        if self.kind == OptimKind::Adam && self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.kind == OptimKind::Adam && self.m.len() != grads.len() {
            return Err(Error::invalid("parameter list changed between steps"));
        }

        let t = (self.steps + 1) as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        let mut new_p = Vec::with_capacity(params.len());
        let mut new_m = Vec::new();
        let mut new_v = Vec::new();
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let (pd, gd) = (p.data(), g.data());
            match self.kind {
                OptimKind::Sgd => {
                    new_p.push(pd.iter().zip(gd).map(|(p, g)| p - self.lr * g).collect::<Vec<_>>())
                }
                OptimKind::Adam => {
                    let m: Vec<f64> = self.m[i].iter().zip(gd).map(|(m, g)| b1 * m + (1.0 - b1) * g).collect();
                    let v: Vec<f64> = self.v[i].iter().zip(gd).map(|(v, g)| b2 * v + (1.0 - b2) * g * g).collect();
                    new_p.push(
                        pd.iter()
                            .zip(m.iter().zip(&v))
                            .map(|(p, (m, v))| p - self.lr * (m / c1) / ((v / c2).sqrt() + self.eps))
                            .collect(),
                    );
                    new_m.push(m);
                    new_v.push(v);
                }
            }
        }
        if new_p.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "optimizer_step",
            });
        }
        for (p, data) in params.into_iter().zip(new_p) {
            p.data_mut().copy_from_slice(&data);
        }
        if self.kind == OptimKind::Adam {
            self.m = new_m;
            self.v = new_v;
        }
        self.steps += 1;
        Ok(())
    }
}

/// Constant learning rate with an optional linear decay to 0 over the last
/// part of training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    /// Fraction of `total_steps` at which decay begins.
    pub decay_start: Option<f64>,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        LrSchedule {
            base,
            decay_start: None,
            total_steps: 0,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        let Some(frac) = self.decay_start else {
            return self.base;
        };
        let start = (frac * self.total_steps as f64).round() as u64;
        if step < start {
            return self.base;
        }
        let span = self.total_steps.saturating_sub(start);
        if span == 0 {
            return 0.0;
        }
        let left = self.total_steps.saturating_sub(step) as f64 / span as f64;
        self.base * left.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Tensor {
        Tensor::vector(vec![v])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for mut opt in [OptimizerState::sgd(0.1), OptimizerState::adam(0.1)] {
            let mut p = Tensor::vector(vec![1.0, -2.0]);
            opt.step(vec![&mut p], &[Tensor::zeros(&[2])]).unwrap();
            assert_eq!(p.data(), &[1.0, -2.0]);
            assert_eq!(opt.steps(), 1);
        }
    }

    #[test]
    fn sgd_step() {
        let mut p = one(1.0);
        OptimizerState::sgd(0.01).step(vec![&mut p], &[one(2.0)]).unwrap();
        assert!((p.data()[0] - 0.98).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [3.0, -0.5, 1e-3, 250.0] {
            let mut p = one(0.0);
            OptimizerState::adam(0.001).step(vec![&mut p], &[one(g)]).unwrap();
            assert!((p.data()[0].abs() - 0.001).abs() < 1e-6, "g = {g}");
            assert_eq!(p.data()[0].signum(), -g.signum());
        }
    }

    #[test]
    fn non_finite_update_is_rejected_without_writing() {
        let mut p = one(1.0);
        let mut opt = OptimizerState::sgd(1e308);
        assert!(opt.step(vec![&mut p], &[one(1e308)]).is_err());
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(opt.steps(), 0);
        assert!(opt.step(vec![&mut p], &[one(f64::NAN)]).is_err());
    }

    #[test]
    fn linear_decay_schedule() {
        let s = LrSchedule {
            base: 0.5,
            decay_start: Some(0.5),
            total_steps: 100,
        };
        assert_eq!(s.at(0), 0.5);
        assert_eq!(s.at(50), 0.5);
        assert!((s.at(75) - 0.25).abs() < 1e-15);
        assert_eq!(s.at(100), 0.0);
        assert_eq!(s.at(150), 0.0);
        let mut prev = f64::INFINITY;
        for t in 0..=120 {
            assert!(s.at(t) <= prev && s.at(t) >= 0.0);
            prev = s.at(t);
        }
        assert_eq!(LrSchedule::constant(0.1).at(1_000_000), 0.1);
    }
}
