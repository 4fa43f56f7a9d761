//! The participant side of a round: minibatch SGD on the local objective.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Strategy;
use crate::data::Dataset;
use crate::nn::{forward_embedding, loss_and_gradient, sgd_step_in_place, Alignment, LossBreakdown, LossSpec, Mode, ModelParams, Proximal};
use crate::prototype::{PrototypeAccumulator, PrototypeSet};
use crate::rng::StreamRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub epochs: usize,
    /// Clamped to the shard size.
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            epochs: 3,
            batch_size: 32,
            learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub model: ModelParams,
    /// Eval-mode class means over the batches of the final epoch.
    pub prototypes: PrototypeSet,
    /// Objective of every minibatch, evaluated before its update.
    pub trace: Vec<LossBreakdown>,
}

impl LocalOutcome {
    pub fn mean_loss(&self) -> LossBreakdown {
        let mut total = LossBreakdown::default();
        for l in &self.trace {
            total.accumulate(l);
        }
        total.scaled(1.0 / self.trace.len().max(1) as f64)
    }
}

/// Runs `cfg.epochs` epochs of minibatch SGD starting from `start`.
///
/// The proximal reference is `start` itself and stays fixed for the call.
/// The alignment term uses `global` for classes present there and only when
/// the strategy shares prototypes.
pub fn local_update(
    shard: &Dataset,
    start: &ModelParams,
    global: Option<&PrototypeSet>,
    strategy: &Strategy,
    cfg: &LocalConfig,
    rng: &mut StreamRng,
) -> Result<LocalOutcome> {
    if shard.is_empty() {
        return Err(Error::Empty("participant shard"));
    }
    if !(cfg.learning_rate > 0.0) || !cfg.learning_rate.is_finite() {
        return Err(Error::invalid("learning_rate", "must be positive and finite"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("local", "epochs and batch size must be positive"));
    }
    if shard.num_features != start.input_dim {
        return Err(Error::dims("shard feature width", start.input_dim, shard.num_features));
    }
    let batch_size = cfg.batch_size.min(shard.len());
    let reference = start.weights.clone();
    let alignment = match global {
        Some(g) if strategy.shares_prototypes() && strategy.lambda() > 0.0 => Some(Alignment {
            weight: strategy.lambda(),
            global: g,
        }),
        _ => None,
    };
    let proximal = (strategy.mu() > 0.0).then_some(Proximal {
        weight: strategy.mu(),
        reference: &reference,
    });
    let spec = LossSpec {
        supervised: 1.0,
        alignment,
        proximal,
    };

    let d = start.embedding_dim();
    let k = start.num_classes;
    let mut model = start.clone();
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs * shard.len().div_ceil(batch_size));
    let mut protos = PrototypeAccumulator::new(k, d);
    let mut features = Vec::with_capacity(batch_size * shard.num_features);
    let mut labels = Vec::with_capacity(batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let last_epoch = epoch + 1 == cfg.epochs;
        for chunk in order.chunks(batch_size) {
            features.clear();
            labels.clear();
            for &i in chunk {
                features.extend_from_slice(shard.row(i));
                labels.push(shard.labels[i]);
            }
            if last_epoch {
                let fwd = forward_embedding(&model, &features, Mode::Eval)?;
                protos.add_batch(&fwd.embeddings, &labels)?;
            }
            let (loss, grad) = loss_and_gradient(&model, &features, &labels, &spec, Mode::Train(rng))?;
            if !loss.total().is_finite() {
                return Err(Error::NonFinite {
                    what: "local objective",
                    iteration: trace.len(),
                });
            }
            sgd_step_in_place(&mut model, &grad, cfg.learning_rate)?;
            trace.push(loss);
        }
    }
    Ok(LocalOutcome {
        model,
        prototypes: protos.finish(),
        trace,
    })
}
