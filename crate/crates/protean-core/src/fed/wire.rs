//! Scalar payloads exchanged between participants and the server, and the
//! closed-form per-round communication cost.
//!
//! A payload is the flat parameter section (if any) followed by a full
//! K × d prototype block (if any). Absent classes travel as zero rows; the
//! presence flags and support counts are metadata, not payload scalars.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{AggregationScope, Strategy};
use crate::prototype::PrototypeSet;
use crate::{Error, Result};

pub const BYTES_PER_SCALAR: u64 = core::mem::size_of::<f64>() as u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub scalars: Vec<f64>,
    pub parameter_len: usize,
    pub prototype_support: Option<Vec<usize>>,
}

impl Payload {
    pub fn encode(parameters: Option<&[f64]>, prototypes: Option<&PrototypeSet>) -> Payload {
        let mut scalars = Vec::new();
        if let Some(p) = parameters {
            scalars.extend_from_slice(p);
        }
        if let Some(protos) = prototypes {
            scalars.extend_from_slice(protos.as_matrix());
        }
        Payload {
            scalars,
            parameter_len: parameters.map_or(0, <[f64]>::len),
            prototype_support: prototypes.map(|p| p.support().to_vec()),
        }
    }

    pub fn scalar_count(&self) -> u64 {
        self.scalars.len() as u64
    }

    pub fn parameters(&self) -> Option<&[f64]> {
        (self.parameter_len > 0).then(|| &self.scalars[..self.parameter_len])
    }

    pub fn prototypes(&self) -> Result<Option<PrototypeSet>> {
        let Some(support) = &self.prototype_support else {
            return Ok(None);
        };
        let block = &self.scalars[self.parameter_len..];
        if support.is_empty() || block.len() % support.len() != 0 {
            return Err(Error::dims("prototype block", support.len(), block.len()));
        }
        let dim = block.len() / support.len();
        PrototypeSet::from_parts(dim, block.to_vec(), support.clone()).map(Some)
    }
}

/// Number of parameters a strategy sends each way.
pub fn aggregated_parameter_count(strategy: &Strategy, total_params: usize, embedding_params: usize) -> usize {
    match strategy.scope() {
        Some(AggregationScope::All) => total_params,
        Some(AggregationScope::EmbeddingOnly) => embedding_params,
        None => 0,
    }
}

/// Scalars moved per round, uplink plus downlink: `2M(m′ + dK)` where m′ is
/// the aggregated parameter count and the `dK` term is present only when
/// prototypes are exchanged.
pub fn communication_cost(strategy: &Strategy, participants: usize, aggregated_params: usize, dim: usize, num_classes: usize) -> u64 {
    let params = if strategy.scope().is_some() { aggregated_params as u64 } else { 0 };
    let protos = if strategy.shares_prototypes() { (dim * num_classes) as u64 } else { 0 };
    2 * participants as u64 * (params + protos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        let protean = Strategy::protean(1.0, 0.1).unwrap();
        assert_eq!(communication_cost(&protean, 10, 1000, 16, 9), 22880);
        assert_eq!(communication_cost(&Strategy::fedavg(), 10, 1000, 16, 9), 20000);
        assert_eq!(communication_cost(&Strategy::fedprox(0.1).unwrap(), 10, 1000, 16, 9), 20000);
        assert_eq!(communication_cost(&Strategy::fedproto(1.0).unwrap(), 10, 1000, 16, 9), 2880);
        assert_eq!(communication_cost(&Strategy::local_only(), 10, 1000, 16, 9), 0);
    }

    #[test]
    fn payload_round_trip() {
        let protos = PrototypeSet::from_parts(2, alloc::vec![1.0, 2.0, 0.0, 0.0], alloc::vec![3, 0]).unwrap();
        let p = Payload::encode(Some(&[5.0, 6.0, 7.0]), Some(&protos));
        assert_eq!(p.scalar_count(), 7);
        assert_eq!(p.parameters(), Some(&[5.0, 6.0, 7.0][..]));
        assert_eq!(p.prototypes().unwrap(), Some(protos.clone()));
        let only = Payload::encode(None, Some(&protos));
        assert_eq!(only.scalar_count(), 4);
        assert_eq!(only.parameters(), None);
    }
}
