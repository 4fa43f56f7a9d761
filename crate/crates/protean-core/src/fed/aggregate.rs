use alloc::vec;

use super::AggregationScope;
use crate::nn::ModelParams;
use crate::{Error, Result};

/// Elementwise mean of the submitted parameters over `scope`.
///
/// With [`AggregationScope::EmbeddingOnly`] the result is `previous` with its
/// embedding section replaced by the mean embedding; the head of `previous`
/// is kept. The sum runs in submission order.
pub fn aggregate_models(submissions: &[ModelParams], scope: AggregationScope, previous: &ModelParams) -> Result<ModelParams> {
    if submissions.is_empty() {
        return Err(Error::Empty("model submissions"));
    }
    if submissions.iter().any(|s| !s.same_layout(previous)) {
        return Err(Error::LayoutMismatch);
    }
    let len = match scope {
        AggregationScope::All => previous.len(),
        AggregationScope::EmbeddingOnly => previous.embedding_len,
    };
    let mut sum = vec![0.0; len];
    for s in submissions {
        for (acc, w) in sum.iter_mut().zip(&s.weights[..len]) {
            *acc += w;
        }
    }
    let m = submissions.len() as f64;
    let mut out = previous.clone();
    for (dst, s) in out.weights[..len].iter_mut().zip(&sum) {
        *dst = s / m;
    }
    Ok(out)
}
