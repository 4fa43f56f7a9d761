//! Reconstruction audit of shared prototypes: an attacker holding a
//! participant's model and one of its class prototypes searches for an input
//! whose embedding matches the prototype, and the result is compared with the
//! true class-mean profile and with uniform random guessing.

mod attack;
mod report;

pub use attack::{reconstruct_from, reconstruct_profile, AttackConfig, Reconstruction};
pub use report::{
    audit_participants, class_mean_profile, dp_sweep, psnr, random_baseline_feature_mse, random_baseline_mse, AuditEntry, AuditReport, AuditTarget,
    DpSweep, DpSweepPoint, Psnr,
};
