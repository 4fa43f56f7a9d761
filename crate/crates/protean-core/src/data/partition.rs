use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Redraws are attempted until every participant holds at least one sample.
const MAX_DRAWS: usize = 1000;

/// Assignment of training rows to M participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub alpha: f64,
    /// Sorted row indices into the training set, one list per participant.
    pub shards: Vec<Vec<usize>>,
    /// `counts[i][j]` = samples of class j held by participant i.
    pub counts: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn num_participants(&self) -> usize {
        self.shards.len()
    }

    /// Classes participant `i` holds no samples of.
    pub fn missing_classes(&self, participant: usize) -> Vec<usize> {
        self.counts[participant].iter().enumerate().filter(|(_, &n)| n == 0).map(|(j, _)| j).collect()
    }
}

/// Per-class Dirichlet partitioning.
///
/// For every class j a proportion vector `p ~ Dir(α·1_M)` is drawn and each
/// sample of that class is sent to a participant drawn from `p`. Participants
/// may end up without any samples of a class. The whole draw repeats (from
/// the same stream) if some participant ends up with an empty shard.
pub fn dirichlet_partition(train: &Dataset, participants: usize, alpha: f64, seed: u64) -> Result<PartitionPlan> {
    if participants < 2 {
        return Err(Error::invalid("participants", "need at least 2 participants"));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid("alpha", "concentration must be positive and finite"));
    }
    if train.len() < participants {
        return Err(Error::invalid("participants", "more participants than training samples"));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|_| Error::invalid("alpha", "invalid gamma shape"))?;
    let mut rng = rng::stream(seed, Stream::Partition, 0);
    let k = train.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in train.labels.iter().enumerate() {
        by_class[y].push(i);
    }

    for _ in 0..MAX_DRAWS {
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); participants];
        let mut counts = vec![vec![0usize; k]; participants];
        for (j, members) in by_class.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let mut weights: Vec<f64> = (0..participants).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) || !total.is_finite() {
                // every gamma draw underflowed: the limit of a vanishing α
                // puts the whole class on one participant
                let pick = rng.random_range(0..participants);
                weights = (0..participants).map(|i| if i == pick { 1.0 } else { 0.0 }).collect();
            }
            let choose = WeightedIndex::new(&weights).map_err(|_| Error::invalid("alpha", "degenerate proportions"))?;
            for &row in members {
                let owner = choose.sample(&mut rng);
                shards[owner].push(row);
                counts[owner][j] += 1;
            }
        }
        if shards.iter().all(|s| !s.is_empty()) {
            shards.iter_mut().for_each(|s| s.sort_unstable());
            return Ok(PartitionPlan { alpha, shards, counts });
        }
    }
    Err(Error::invalid("alpha", "could not give every participant a sample"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthesize_gaussian;

    fn entropy(counts: &[usize]) -> f64 {
        let n: usize = counts.iter().sum();
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n as f64;
                -p * p.ln()
            })
            .sum()
    }

    #[test]
    fn shards_cover_the_training_set_exactly() {
        let d = synthesize_gaussian(9, 4, 40, 3.0, 3).unwrap();
        let plan = dirichlet_partition(&d, 10, 0.25, 17).unwrap();
        let mut all: Vec<usize> = plan.shards.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
        for (shard, counts) in plan.shards.iter().zip(&plan.counts) {
            assert_eq!(shard.len(), counts.iter().sum::<usize>());
            for (j, &n) in counts.iter().enumerate() {
                assert_eq!(shard.iter().filter(|&&r| d.labels[r] == j).count(), n);
            }
        }
        assert_eq!(plan, dirichlet_partition(&d, 10, 0.25, 17).unwrap());
    }

    #[test]
    fn huge_alpha_is_nearly_uniform() {
        let d = synthesize_gaussian(3, 4, 10_000, 3.0, 1).unwrap();
        for seed in 0..5 {
            let plan = dirichlet_partition(&d, 4, 1e6, seed).unwrap();
            for counts in &plan.counts {
                for &n in counts {
                    let expected = 10_000.0 / 4.0;
                    assert!((n as f64 - expected).abs() <= 0.1 * expected, "seed {seed}: {n}");
                }
            }
        }
    }

    #[test]
    fn small_alpha_leaves_participants_missing_classes() {
        let d = synthesize_gaussian(9, 4, 100, 3.0, 1).unwrap();
        let mut participants_missing = 0usize;
        let seeds = 20;
        for seed in 0..seeds {
            let plan = dirichlet_partition(&d, 10, 0.25, seed).unwrap();
            let missing = (0..10).filter(|&i| !plan.missing_classes(i).is_empty()).count();
            assert!(missing >= 1, "seed {seed}");
            participants_missing += missing;
        }
        // the strongly skewed regime: most participants lack some class
        assert!(participants_missing as f64 / seeds as f64 >= 5.0);
    }

    #[test]
    fn heterogeneity_falls_with_alpha() {
        let d = synthesize_gaussian(9, 4, 100, 3.0, 1).unwrap();
        let mut previous = 0.0;
        for alpha in [0.25, 0.5, 0.75, 5.0] {
            let mut total = 0.0;
            for seed in 0..10 {
                let plan = dirichlet_partition(&d, 10, alpha, seed).unwrap();
                total += plan.counts.iter().map(|c| entropy(c)).sum::<f64>() / 10.0;
            }
            let mean = total / 10.0;
            assert!(mean >= previous, "alpha {alpha}: {mean} < {previous}");
            previous = mean;
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let d = synthesize_gaussian(2, 4, 10, 3.0, 1).unwrap();
        assert!(dirichlet_partition(&d, 1, 0.5, 0).is_err());
        assert!(dirichlet_partition(&d, 2, 0.0, 0).is_err());
        assert!(dirichlet_partition(&d, 2, -1.0, 0).is_err());
    }
}
