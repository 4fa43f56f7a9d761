//! Federated training: strategies, the participant update, aggregation,
//! payload accounting and the round loop.

mod aggregate;
mod local;
mod round;
mod sim;
mod strategy;
pub mod wire;

pub use aggregate::aggregate_models;
pub use local::{local_update, LocalConfig, LocalOutcome};
pub use round::{run_round, ParticipantLoss, RoundConfig, RoundReport, RoundState};
pub use sim::{dataset_cross_entropy, initial_state, participant_classifier, run_federation, Executor, FederationConfig, FederationRun, Sequential};
pub use strategy::{AggregationScope, InferenceMode, Strategy, StrategyKind};
pub use wire::communication_cost;
