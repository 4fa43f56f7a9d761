//! Thread-pool executor for participant and seed parallelism.

use protean_core::fed::Executor;
use rayon::prelude::*;

/// Runs jobs on the global rayon pool. Results keep input order, so output
/// is identical to [`protean_core::fed::Sequential`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Parallel;

impl Executor for Parallel {
    fn map_vec<I: Send, T: Send, F: Fn(usize, I) -> T + Sync>(&self, inputs: Vec<I>, f: F) -> Vec<T> {
        inputs.into_par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
}
