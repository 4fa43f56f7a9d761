//! The local training objective and its gradients.
//!
//! The objective for a minibatch is
//!
//! ```text
//! w_S · CE  +  λ · Σ_j ‖C_j(batch) − C̄_j‖²  +  (μ/2) · ‖ω − ω_ref‖²
//! ```
//!
//! where CE is the mean cross-entropy over the batch and `C_j(batch)` is the
//! mean embedding of the batch samples labelled `j`. The alignment sum runs
//! over classes present both in the batch and in the global prototypes.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::model::ModelParams;
use super::network::{backward, forward, forward_embedding, Mode};
use crate::prototype::{alignment_loss, compute_local_prototypes, PrototypeSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Alignment<'a> {
    pub weight: f64,
    pub global: &'a PrototypeSet,
}

#[derive(Debug, Clone, Copy)]
pub struct Proximal<'a> {
    pub weight: f64,
    pub reference: &'a [f64],
}

/// Which objective terms to evaluate, with their weights.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<'a> {
    pub supervised: f64,
    pub alignment: Option<Alignment<'a>>,
    pub proximal: Option<Proximal<'a>>,
}

impl LossSpec<'_> {
    pub fn cross_entropy() -> Self {
        LossSpec {
            supervised: 1.0,
            alignment: None,
            proximal: None,
        }
    }
}

/// Weighted objective terms: `L_S`, `λ·L_R` and `(μ/2)·‖ω − ω_ref‖²`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub alignment: f64,
    pub proximal: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.supervised + self.alignment + self.proximal
    }

    pub(crate) fn accumulate(&mut self, other: &LossBreakdown) {
        self.supervised += other.supervised;
        self.alignment += other.alignment;
        self.proximal += other.proximal;
    }

    pub(crate) fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            supervised: self.supervised * s,
            alignment: self.alignment * s,
            proximal: self.proximal * s,
        }
    }
}

fn check_labels(model: &ModelParams, features: &[f64], labels: &[usize]) -> Result<()> {
    let rows = features.len() / model.input_dim.max(1);
    if rows != labels.len() || features.len() % model.input_dim != 0 {
        return Err(Error::dims("labels", rows, labels.len()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= model.num_classes) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: model.num_classes,
        });
    }
    Ok(())
}

/// Objective value and its gradient over ω (aligned with `model.weights`).
pub fn loss_and_gradient(
    model: &ModelParams,
    features: &[f64],
    labels: &[usize],
    spec: &LossSpec<'_>,
    mode: Mode<'_>,
) -> Result<(LossBreakdown, Vec<f64>)> {
    evaluate(model, features, labels, spec, mode, true).map(|(l, g)| (l, g.unwrap_or_default()))
}

/// Objective value only.
pub fn loss_value(model: &ModelParams, features: &[f64], labels: &[usize], spec: &LossSpec<'_>, mode: Mode<'_>) -> Result<LossBreakdown> {
    evaluate(model, features, labels, spec, mode, false).map(|(l, _)| l)
}

fn evaluate(
    model: &ModelParams,
    features: &[f64],
    labels: &[usize],
    spec: &LossSpec<'_>,
    mode: Mode<'_>,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Vec<f64>>)> {
    check_labels(model, features, labels)?;
    let k = model.num_classes;
    let d = model.embedding_dim();
    let use_ce = spec.supervised != 0.0;
    let align = spec.alignment.filter(|a| a.weight != 0.0);
    let prox = spec.proximal.filter(|p| p.weight != 0.0);

    let mut breakdown = LossBreakdown::default();
    let mut grad = want_grad.then(|| vec![0.0; model.len()]);

    if use_ce || align.is_some() {
        let fwd = if use_ce {
            forward(model, features, mode)?
        } else {
            forward_embedding(model, features, mode)?
        };
        let batch = fwd.batch;

        let mut grad_logp = None;
        if use_ce {
            let scale = spec.supervised / batch as f64;
            let mut nll = 0.0;
            for (row, &y) in labels.iter().enumerate() {
                nll -= fwd.log_probs[row * k + y];
            }
            breakdown.supervised = scale * nll;
            if want_grad {
                let mut g = vec![0.0; batch * k];
                for (row, &y) in labels.iter().enumerate() {
                    g[row * k + y] = -scale;
                }
                grad_logp = Some(g);
            }
        }

        let mut grad_emb = None;
        if let Some(a) = align {
            if a.global.dim() != d || a.global.num_classes() != k {
                return Err(Error::dims("global prototype width", d, a.global.dim()));
            }
            let local = compute_local_prototypes(&fwd.embeddings, labels, k, d)?;
            let al = alignment_loss(&local, a.global)?;
            breakdown.alignment = a.weight * al.value;
            if want_grad {
                let mut g = vec![0.0; batch * d];
                for (row, &y) in labels.iter().enumerate() {
                    if local.support()[y] == 0 {
                        continue;
                    }
                    let s = a.weight / local.support()[y] as f64;
                    for (dst, src) in g[row * d..(row + 1) * d].iter_mut().zip(&al.gradient[y * d..(y + 1) * d]) {
                        *dst = s * src;
                    }
                }
                grad_emb = Some(g);
            }
        }

        if let Some(pg) = grad.as_deref_mut() {
            backward(model, &fwd, grad_logp.as_deref(), grad_emb.as_deref(), Some(pg), false)?;
        }
    }

    if let Some(p) = prox {
        if p.reference.len() != model.len() {
            return Err(Error::dims("proximal reference", model.len(), p.reference.len()));
        }
        let mut sq = 0.0;
        for (w, r) in model.weights.iter().zip(p.reference) {
            sq += (w - r) * (w - r);
        }
        breakdown.proximal = 0.5 * p.weight * sq;
        if let Some(pg) = grad.as_deref_mut() {
            for ((g, w), r) in pg.iter_mut().zip(&model.weights).zip(p.reference) {
                *g += p.weight * (w - r);
            }
        }
    }
    Ok((breakdown, grad))
}

/// Value and input-gradient of `scale · ‖φ(x) − target‖²` in eval mode.
pub fn embedding_objective(model: &ModelParams, x: &[f64], target: &[f64], scale: f64) -> Result<(f64, Vec<f64>)> {
    if x.len() != model.input_dim {
        return Err(Error::dims("feature vector", model.input_dim, x.len()));
    }
    let d = model.embedding_dim();
    if target.len() != d {
        return Err(Error::dims("target prototype", d, target.len()));
    }
    let fwd = forward_embedding(model, x, Mode::Eval)?;
    let mut value = 0.0;
    let mut ge = vec![0.0; d];
    for ((g, e), t) in ge.iter_mut().zip(&fwd.embeddings).zip(target) {
        value += (e - t) * (e - t);
        *g = 2.0 * scale * (e - t);
    }
    let grad = backward(model, &fwd, None, Some(&ge), None, true)?.expect("input gradient requested");
    Ok((scale * value, grad))
}

/// Gradient over `x` of `‖φ(x) − target‖²`.
pub fn input_gradient(model: &ModelParams, x: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    embedding_objective(model, x, target, 1.0).map(|(_, g)| g)
}
