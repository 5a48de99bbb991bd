//! Margin search seeded by the auto-encoder's converged reconstruction
//! energy.

use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::objectives::MarginSchedule;
use crate::trainer::{estimate_margin_for, train_run, RunStatus, TrainState};

/// Geometric ladder `estimate · factor^k`, `k = 0..rungs`, each rung
/// scored by short pilot runs on seeds kept apart from the real runs.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginLadder {
    pub rungs: usize,
    pub factor: f64,
    pub estimate_steps: u64,
    pub pilot_steps: u64,
    pub pilot_seeds: Vec<u64>,
}

impl Default for MarginLadder {
    fn default() -> Self {
        MarginLadder {
            rungs: 6,
            factor: 2.0,
            estimate_steps: 2000,
            pilot_steps: 5000,
            pilot_seeds: vec![100, 101],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginCandidate {
    pub m: f64,
    /// Pilot scores summed over the pilot seeds; diverged pilots add 0.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginChoice {
    pub estimate: f64,
    pub candidates: Vec<MarginCandidate>,
    pub chosen: f64,
}

/// Estimates the margin from `cfg`'s auto-encoder, then picks the ladder
/// rung with the highest total pilot score; ties go to the smaller margin.
/// `score` sees each pilot's final state.
pub fn search_margin(
    cfg: &ExperimentConfig,
    data: &Dataset,
    ladder: &MarginLadder,
    score: &mut dyn FnMut(&mut TrainState, &ExperimentConfig) -> Result<f64>,
) -> Result<MarginChoice> {
    if ladder.rungs == 0 || !(ladder.factor > 1.0) || ladder.pilot_seeds.is_empty() {
        return Err(Error::invalid("margin ladder needs rungs, a factor > 1 and pilot seeds"));
    }
    let estimate = estimate_margin_for(cfg, data, ladder.estimate_steps)?.suggested;
    let mut candidates = Vec::with_capacity(ladder.rungs);
    for k in 0..ladder.rungs {
        let m = estimate * ladder.factor.powi(k as i32);
        let mut total = 0.0;
        for &seed in &ladder.pilot_seeds {
            let pilot = ExperimentConfig {
                margin: MarginSchedule::Constant { m0: m },
                total_steps: ladder.pilot_steps,
                seed,
                ..cfg.clone()
            };
            let mut out = train_run(&pilot, data, None, &mut |_| {})?;
            if out.record.status == RunStatus::Completed {
                total += score(&mut out.state, &pilot)?;
            }
        }
        candidates.push(MarginCandidate { m, score: total });
    }
    let best = candidates
        .iter()
        .fold(None::<&MarginCandidate>, |b, c| match b {
            Some(b) if b.score >= c.score => Some(b),
            _ => Some(c),
        })
        .expect("at least one rung");
    Ok(MarginChoice {
        estimate,
        chosen: best.m,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_starts_at_the_estimate_and_prefers_smaller_ties() {
        let data = crate::data::load_named("ring", 256, 0).unwrap();
        let cfg = ExperimentConfig {
            dataset: "ring".into(),
            n_layer_g: 2,
            n_layer_d: 2,
            size_g: 8,
            size_d: 8,
            batch_size: 16,
            ..ExperimentConfig::default()
        };
        let ladder = MarginLadder {
            rungs: 3,
            estimate_steps: 20,
            pilot_steps: 5,
            pilot_seeds: vec![7],
            ..MarginLadder::default()
        };
        let mut calls = 0;
        let choice = search_margin(&cfg, &data, &ladder, &mut |_, c| {
            calls += 1;
            Ok(if c.margin.initial() > 0.0 { 1.0 } else { 0.0 })
        })
        .unwrap();
        assert_eq!(calls, 3);
        assert_eq!(choice.candidates[0].m, choice.estimate);
        assert_eq!(choice.candidates[2].m, choice.estimate * 4.0);
        assert_eq!(choice.chosen, choice.estimate);
    }
}
