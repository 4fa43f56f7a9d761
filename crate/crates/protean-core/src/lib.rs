//! Federated prototype learning for collaborative intrusion detection.
//!
//! This crate is the allocation-only algorithmic core: a small CNN engine with
//! manual backpropagation, dataset transforms and Dirichlet partitioning,
//! class prototypes, the federated round loop with its aggregation strategies,
//! evaluation metrics and the prototype reconstruction audit. It has no IO and
//! builds without `std`; the `protean` crate wires it to files and a CLI.
//!
//! All randomness is drawn from explicitly seeded ChaCha streams so every
//! operation is bitwise reproducible.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod audit;
pub mod data;
mod error;
pub mod eval;
pub mod fed;
mod linalg;
pub mod nn;
pub mod prototype;
pub mod rng;

pub use error::{Error, Result};
