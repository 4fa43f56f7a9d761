use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::Dataset;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Stratified train/test split.
///
/// Each class with at least two samples contributes `round(fraction · n_c)`
/// samples to training, clamped so both sides get at least one. A class with
/// a single sample goes to training. The training split's feature ranges are
/// recomputed and shared with the test split.
pub fn split_train_test(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction", "must lie strictly between 0 and 1"));
    }
    if data.len() < 10 {
        return Err(Error::invalid("dataset", "need at least 10 samples to split"));
    }
    let mut rng = rng::stream(seed, Stream::Split, 0);
    let mut by_class: Vec<Vec<usize>> = alloc::vec![Vec::new(); data.num_classes()];
    for (i, &y) in data.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut members in by_class {
        members.shuffle(&mut rng);
        let n = members.len();
        let take = if n <= 1 {
            n
        } else {
            (libm::round(train_fraction * n as f64) as usize).clamp(1, n - 1)
        };
        train.extend_from_slice(&members[..take]);
        test.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let mut train_set = data.subset(&train);
    train_set.recompute_ranges();
    let mut test_set = data.subset(&test);
    test_set.feature_ranges = train_set.feature_ranges.clone();
    Ok((train_set, test_set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthesize_gaussian;

    #[test]
    fn balanced_split_is_stratified() {
        let d = synthesize_gaussian(2, 4, 50, 3.0, 1).unwrap();
        let (train, test) = split_train_test(&d, 0.8, 9).unwrap();
        assert_eq!(train.class_counts(), alloc::vec![40, 40]);
        assert_eq!(test.class_counts(), alloc::vec![10, 10]);
    }

    #[test]
    fn split_is_seeded() {
        let d = synthesize_gaussian(3, 4, 20, 3.0, 1).unwrap();
        let a = split_train_test(&d, 0.8, 4).unwrap();
        let b = split_train_test(&d, 0.8, 4).unwrap();
        let c = split_train_test(&d, 0.8, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0.features, c.0.features);
    }

    #[test]
    fn rejects_degenerate_fractions_and_tiny_sets() {
        let d = synthesize_gaussian(2, 4, 10, 3.0, 1).unwrap();
        assert!(split_train_test(&d, 1.0, 0).is_err());
        assert!(split_train_test(&d, 0.0, 0).is_err());
        let tiny = d.subset(&[0, 1, 2, 3, 4, 10, 11, 12, 13]);
        assert!(split_train_test(&tiny, 0.8, 0).is_err());
    }

    #[test]
    fn singleton_class_goes_to_training() {
        let d = synthesize_gaussian(3, 4, 10, 3.0, 2).unwrap();
        let mut keep: Vec<usize> = (0..20).collect();
        keep.push(25);
        let d = d.subset(&keep);
        let (train, test) = split_train_test(&d, 0.8, 1).unwrap();
        assert_eq!(train.class_counts()[2], 1);
        assert_eq!(test.class_counts()[2], 0);
        assert_eq!(train.len() + test.len(), d.len());
    }
}
