//! One server round: broadcast, local updates, upload, aggregation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::wire::{Payload, BYTES_PER_SCALAR};
use super::{aggregate_models, local_update, AggregationScope, Executor, LocalConfig, LocalOutcome, Strategy};
use crate::data::Dataset;
use crate::nn::{LossBreakdown, ModelParams};
use crate::prototype::{add_dp_noise, aggregate_global_prototypes, PrototypeAveraging, PrototypeSet};
use crate::rng::StreamRng;
use crate::{Error, Result};

/// Everything the simulation carries from one round to the next.
#[derive(Debug, Clone)]
pub struct RoundState {
    /// Number of completed rounds.
    pub round: usize,
    pub global: ModelParams,
    pub global_prototypes: PrototypeSet,
    /// Each participant's model after its latest local update.
    pub locals: Vec<ModelParams>,
    /// Each participant's latest prototypes, before any noise.
    pub local_prototypes: Vec<PrototypeSet>,
    /// The prototypes each participant last sent to the server.
    pub uploaded_prototypes: Vec<PrototypeSet>,
    pub rngs: Vec<StreamRng>,
    pub dp_rngs: Vec<StreamRng>,
}

impl RoundState {
    pub fn num_participants(&self) -> usize {
        self.locals.len()
    }

    /// The model participant `i` starts its next local update from.
    pub fn starting_model(&self, strategy: &Strategy, participant: usize) -> ModelParams {
        match strategy.scope() {
            Some(AggregationScope::All) => self.global.clone(),
            Some(AggregationScope::EmbeddingOnly) => {
                let mut m = self.locals[participant].clone();
                m.embedding_section_mut().copy_from_slice(self.global.embedding_section());
                m
            }
            None => self.locals[participant].clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub local: LocalConfig,
    /// Standard deviation of the Gaussian noise added to uploaded prototypes.
    pub dp_sigma: f64,
    pub averaging: PrototypeAveraging,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticipantLoss {
    pub participant: usize,
    /// Mean over the minibatch objectives of the round.
    pub loss: LossBreakdown,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based round index.
    pub round: usize,
    pub participants: Vec<ParticipantLoss>,
    /// Participant mean of the round-averaged objective.
    pub objective: f64,
    pub scalars_up: u64,
    pub scalars_down: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    /// Classes no participant held this round.
    pub absent_global_classes: Vec<usize>,
}

fn downlink(state: &RoundState, strategy: &Strategy) -> Payload {
    let params = match strategy.scope() {
        Some(AggregationScope::All) => Some(&state.global.weights[..]),
        Some(AggregationScope::EmbeddingOnly) => Some(state.global.embedding_section()),
        None => None,
    };
    Payload::encode(params, strategy.shares_prototypes().then_some(&state.global_prototypes))
}

fn uplink(outcome: &LocalOutcome, uploaded: &PrototypeSet, strategy: &Strategy) -> Payload {
    let params = match strategy.scope() {
        Some(AggregationScope::All) => Some(&outcome.model.weights[..]),
        Some(AggregationScope::EmbeddingOnly) => Some(outcome.model.embedding_section()),
        None => None,
    };
    Payload::encode(params, strategy.shares_prototypes().then_some(uploaded))
}

/// Runs one round over `shards` (indexed by participant id).
///
/// Local updates go through `executor`; every aggregate is a fold in
/// participant order, so the executor never changes the result.
pub fn run_round<E: Executor>(
    state: RoundState,
    shards: &[Dataset],
    strategy: &Strategy,
    cfg: &RoundConfig,
    executor: &E,
) -> Result<(RoundState, RoundReport)> {
    let m = state.num_participants();
    if shards.len() != m {
        return Err(Error::dims("participant shards", m, shards.len()));
    }
    if !(cfg.dp_sigma >= 0.0) || !cfg.dp_sigma.is_finite() {
        return Err(Error::invalid("dp_sigma", "must be finite and non-negative"));
    }
    let mut prev = state;
    let rngs = core::mem::take(&mut prev.rngs);
    let mut dp_rngs = core::mem::take(&mut prev.dp_rngs);
    let round = prev.round;

    let mut scalars_down = 0u64;
    let mut inputs = Vec::with_capacity(m);
    for (i, rng) in rngs.into_iter().enumerate() {
        scalars_down += downlink(&prev, strategy).scalar_count();
        inputs.push((prev.starting_model(strategy, i), rng));
    }
    let global_protos = strategy.shares_prototypes().then_some(&prev.global_prototypes);
    let results = executor.map_vec(inputs, |i, (start, mut rng)| {
        let out = local_update(&shards[i], &start, global_protos, strategy, &cfg.local, &mut rng);
        (out, rng)
    });

    let mut outcomes = Vec::with_capacity(m);
    let mut rngs = Vec::with_capacity(m);
    for (i, (out, rng)) in results.into_iter().enumerate() {
        outcomes.push(out.map_err(|e| e.in_participant(i))?);
        rngs.push(rng);
    }

    let mut uploaded = Vec::with_capacity(m);
    let mut scalars_up = 0u64;
    let mut participants = Vec::with_capacity(m);
    for (i, out) in outcomes.iter().enumerate() {
        let noisy = if strategy.shares_prototypes() {
            add_dp_noise(&out.prototypes, cfg.dp_sigma, &mut dp_rngs[i]).map_err(|e| e.in_participant(i))?
        } else {
            out.prototypes.clone()
        };
        scalars_up += uplink(out, &noisy, strategy).scalar_count();
        uploaded.push(noisy);
        participants.push(ParticipantLoss {
            participant: i,
            loss: out.mean_loss(),
            steps: out.trace.len(),
        });
    }

    let locals: Vec<ModelParams> = outcomes.iter().map(|o| o.model.clone()).collect();
    let global = match strategy.scope() {
        Some(scope) => aggregate_models(&locals, scope, &prev.global)?,
        None => prev.global,
    };
    let global_prototypes = if strategy.shares_prototypes() {
        aggregate_global_prototypes(&uploaded, cfg.averaging)?
    } else {
        prev.global_prototypes
    };
    let absent_global_classes = (0..global_prototypes.num_classes()).filter(|&j| !global_prototypes.is_present(j)).collect();
    let objective = participants.iter().map(|p| p.loss.total()).sum::<f64>() / m as f64;

    let report = RoundReport {
        round: round + 1,
        participants,
        objective,
        scalars_up,
        scalars_down,
        bytes_up: scalars_up * BYTES_PER_SCALAR,
        bytes_down: scalars_down * BYTES_PER_SCALAR,
        absent_global_classes,
    };
    let state = RoundState {
        round: round + 1,
        global,
        global_prototypes,
        locals,
        local_prototypes: outcomes.into_iter().map(|o| o.prototypes).collect(),
        uploaded_prototypes: uploaded,
        rngs,
        dp_rngs,
    };
    Ok((state, report))
}
