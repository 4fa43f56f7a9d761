use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{embedding_objective, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Independent random starts; the best final iterate wins.
    pub restarts: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            steps: 2000,
            step_size: 0.01,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub profile: Vec<f64>,
    pub objective: f64,
    /// Gradient steps taken over all restarts.
    pub iterations: usize,
    /// Best objective seen after each step of the winning restart, starting
    /// with the objective at its initial point.
    pub best_trace: Vec<f64>,
}

fn check_bounds(bounds: &[(f64, f64)], model: &ModelParams) -> Result<()> {
    if bounds.len() != model.input_dim {
        return Err(Error::dims("feature bounds", model.input_dim, bounds.len()));
    }
    if bounds.iter().any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(Error::invalid("bounds", "need finite lo ≤ hi per feature"));
    }
    Ok(())
}

/// Projected gradient descent on `‖φ(x) − target‖²` from `start`, keeping
/// the best iterate.
pub fn reconstruct_from(model: &ModelParams, target: &[f64], bounds: &[(f64, f64)], start: &[f64], cfg: &AttackConfig) -> Result<Reconstruction> {
    check_bounds(bounds, model)?;
    if !(cfg.step_size > 0.0) || !cfg.step_size.is_finite() {
        return Err(Error::invalid("step_size", "must be positive and finite"));
    }
    let mut x: Vec<f64> = start.iter().zip(bounds).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect();
    let (mut value, mut grad) = embedding_objective(model, &x, target, 1.0)?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "attack objective",
            iteration: 0,
        });
    }
    let mut best = x.clone();
    let mut best_value = value;
    let mut best_trace = Vec::with_capacity(cfg.steps + 1);
    best_trace.push(best_value);
    for step in 1..=cfg.steps {
        for ((xi, g), (lo, hi)) in x.iter_mut().zip(&grad).zip(bounds) {
            *xi = (*xi - cfg.step_size * g).clamp(*lo, *hi);
        }
        (value, grad) = embedding_objective(model, &x, target, 1.0)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: "attack objective",
                iteration: step,
            });
        }
        if value < best_value {
            best_value = value;
            best.copy_from_slice(&x);
        }
        best_trace.push(best_value);
    }
    Ok(Reconstruction {
        profile: best,
        objective: best_value,
        iterations: cfg.steps,
        best_trace,
    })
}

/// [`reconstruct_from`] with `cfg.restarts` uniform random starts inside
/// `bounds`.
pub fn reconstruct_profile(model: &ModelParams, target: &[f64], bounds: &[(f64, f64)], cfg: &AttackConfig, rng: &mut impl Rng) -> Result<Reconstruction> {
    check_bounds(bounds, model)?;
    if cfg.restarts == 0 {
        return Err(Error::invalid("restarts", "need at least one start"));
    }
    let mut best: Option<Reconstruction> = None;
    let mut iterations = 0;
    for _ in 0..cfg.restarts {
        let start: Vec<f64> = bounds.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo }).collect();
        let r = reconstruct_from(model, target, bounds, &start, cfg)?;
        iterations += r.iterations;
        if best.as_ref().is_none_or(|b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    let mut best = best.expect("at least one restart");
    best.iterations = iterations;
    Ok(best)
}
