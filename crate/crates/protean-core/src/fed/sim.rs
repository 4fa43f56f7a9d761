//! Multi-round federation driver.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{run_round, InferenceMode, LocalConfig, RoundConfig, RoundReport, RoundState, Strategy};
use crate::eval::Classifier;
use crate::data::Dataset;
use crate::nn::{build_model_with, loss_value, Architecture, LossSpec, Mode};
use crate::prototype::{PrototypeAveraging, PrototypeSet};
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Runs per-participant work. Implementations must return outputs in input
/// order; they may run the calls concurrently.
pub trait Executor: Sync {
    fn map_vec<I, T, F>(&self, inputs: Vec<I>, f: F) -> Vec<T>
    where
        I: Send,
        T: Send,
        F: Fn(usize, I) -> T + Sync;
}

/// Runs every call on the current thread, in order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_vec<I, T, F>(&self, inputs: Vec<I>, f: F) -> Vec<T>
    where
        I: Send,
        T: Send,
        F: Fn(usize, I) -> T + Sync,
    {
        inputs.into_iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub strategy: Strategy,
    pub rounds: usize,
    pub local: LocalConfig,
    pub dp_sigma: f64,
    pub averaging: PrototypeAveraging,
    pub architecture: Architecture,
    pub seed: u64,
}

impl FederationConfig {
    pub fn new(strategy: Strategy, seed: u64) -> Self {
        FederationConfig {
            strategy,
            rounds: 10,
            local: LocalConfig::default(),
            dp_sigma: 0.0,
            averaging: PrototypeAveraging::default(),
            architecture: Architecture::default(),
            seed,
        }
    }

    pub fn round_config(&self) -> RoundConfig {
        RoundConfig {
            local: self.local,
            dp_sigma: self.dp_sigma,
            averaging: self.averaging,
        }
    }
}

/// Round-0 state: every participant holds the same freshly built model and
/// no prototypes exist yet.
pub fn initial_state(cfg: &FederationConfig, shards: &[Dataset]) -> Result<RoundState> {
    let first = shards.first().ok_or(Error::Empty("participant shards"))?;
    let (f, k) = (first.num_features, first.num_classes());
    if let Some(bad) = shards.iter().find(|s| s.num_features != f || s.num_classes() != k) {
        return Err(Error::dims("shard feature width", f, bad.num_features));
    }
    let global = build_model_with(cfg.architecture, f, k, cfg.seed)?;
    let d = global.embedding_dim();
    let m = shards.len();
    Ok(RoundState {
        round: 0,
        locals: alloc::vec![global.clone(); m],
        global,
        global_prototypes: PrototypeSet::absent(k, d),
        local_prototypes: alloc::vec![PrototypeSet::absent(k, d); m],
        uploaded_prototypes: alloc::vec![PrototypeSet::absent(k, d); m],
        rngs: (0..m).map(|i| rng::stream(cfg.seed, Stream::Local, i as u64)).collect(),
        dp_rngs: (0..m).map(|i| rng::stream(cfg.seed, Stream::DpNoise, i as u64)).collect(),
    })
}

const EVAL_CHUNK: usize = 256;

/// Mean cross-entropy of `model` over `data` in eval mode.
pub fn dataset_cross_entropy(model: &crate::nn::ModelParams, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let f = data.num_features;
    let mut total = 0.0;
    let mut start = 0;
    while start < data.len() {
        let end = (start + EVAL_CHUNK).min(data.len());
        let l = loss_value(model, &data.features[start * f..end * f], &data.labels[start..end], &LossSpec::cross_entropy(), Mode::Eval)?;
        total += l.supervised * (end - start) as f64;
        start = end;
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone)]
pub struct FederationRun {
    pub state: RoundState,
    pub reports: Vec<RoundReport>,
    /// Participant mean of the objective at the initial model; with no
    /// prototypes and a zero proximal gap this is the cross-entropy alone.
    pub initial_objective: f64,
}

impl FederationRun {
    /// Objective per round, starting with the initial one.
    pub fn objective_curve(&self) -> Vec<f64> {
        core::iter::once(self.initial_objective).chain(self.reports.iter().map(|r| r.objective)).collect()
    }
}

/// Runs `cfg.rounds` rounds, calling `observer` after each.
pub fn run_federation<E: Executor>(
    cfg: &FederationConfig,
    shards: &[Dataset],
    executor: &E,
    mut observer: impl FnMut(&RoundState, &RoundReport),
) -> Result<FederationRun> {
    let mut state = initial_state(cfg, shards)?;
    let initial: Vec<Result<f64>> = executor.map_vec(shards.iter().collect(), |_, s| dataset_cross_entropy(&state.global, s));
    let mut initial_objective = 0.0;
    for (i, v) in initial.into_iter().enumerate() {
        initial_objective += v.map_err(|e| e.in_participant(i))?;
    }
    initial_objective /= shards.len() as f64;
    let round_cfg = cfg.round_config();
    let mut reports = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let (next, report) = run_round(state, shards, &cfg.strategy, &round_cfg, executor)?;
        observer(&next, &report);
        state = next;
        reports.push(report);
    }
    Ok(FederationRun {
        state,
        reports,
        initial_objective,
    })
}

/// The predictor participant `i` deploys: its own latest model, combined
/// with the global prototypes when the strategy shares them and with its own
/// prototypes otherwise.
pub fn participant_classifier<'a>(state: &'a RoundState, strategy: &Strategy, participant: usize, mode: InferenceMode) -> Classifier<'a> {
    let model = &state.locals[participant];
    match mode {
        InferenceMode::Head => Classifier::Head(model),
        InferenceMode::NearestPrototype => Classifier::NearestPrototype {
            model,
            prototypes: if strategy.shares_prototypes() {
                &state.global_prototypes
            } else {
                &state.local_prototypes[participant]
            },
        },
    }
}
