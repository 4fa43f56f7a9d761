//! Labelled feature matrices and the transforms applied before federation:
//! normalization, stratified splitting, Dirichlet partitioning and the
//! synthetic Gaussian benchmark.

mod partition;
mod preprocess;
mod split;
mod synth;

pub use partition::{dirichlet_partition, PartitionPlan};
pub use preprocess::{preprocess, Normalization, Normalizer};
pub use split::split_train_test;
pub use synth::synthesize_gaussian;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// N × F row-major features with class ids in `[0, K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub num_features: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    /// Per-feature raw `(min, max)` over the training data this set derives
    /// from. Normalization leaves it untouched.
    pub feature_ranges: Vec<(f64, f64)>,
}

impl Dataset {
    /// Validates the parts and records feature ranges from `features`.
    pub fn new(features: Vec<f64>, num_features: usize, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if num_features == 0 {
            return Err(Error::invalid("num_features", "need at least one feature"));
        }
        if features.len() != labels.len() * num_features {
            return Err(Error::dims("feature matrix", labels.len() * num_features, features.len()));
        }
        if class_names.len() < 2 {
            return Err(Error::invalid("class_names", "need at least 2 classes"));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: class_names.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features", "values must be finite"));
        }
        let feature_ranges = ranges(&features, num_features);
        Ok(Dataset {
            num_features,
            features,
            labels,
            class_names,
            feature_ranges,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.features[index * self.num_features..(index + 1) * self.num_features]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order. Class names and ranges carry over.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.num_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            num_features: self.num_features,
            features,
            labels,
            class_names: self.class_names.clone(),
            feature_ranges: self.feature_ranges.clone(),
        }
    }

    pub(crate) fn recompute_ranges(&mut self) {
        self.feature_ranges = ranges(&self.features, self.num_features);
    }
}

fn ranges(features: &[f64], width: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); width];
    for row in features.chunks(width) {
        for (r, &v) in out.iter_mut().zip(row) {
            r.0 = r.0.min(v);
            r.1 = r.1.max(v);
        }
    }
    if features.is_empty() {
        out.iter_mut().for_each(|r| *r = (0.0, 0.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|j| j.to_string()).collect()
    }

    #[test]
    fn construction_validates_and_records_ranges() {
        let d = Dataset::new(vec![0.0, 5.0, 2.0, -1.0, 4.0, 3.0], 2, vec![0, 1, 1], names(2)).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.feature_ranges, vec![(0.0, 4.0), (-1.0, 5.0)]);
        assert_eq!(d.class_counts(), vec![1, 2]);
        assert_eq!(d.subset(&[2, 0]).labels, vec![1, 0]);

        assert!(Dataset::new(vec![0.0, 1.0], 2, vec![2], names(2)).is_err());
        assert!(Dataset::new(vec![f64::NAN, 1.0], 2, vec![0], names(2)).is_err());
        assert!(Dataset::new(vec![0.0, 1.0], 2, vec![0], names(1)).is_err());
        assert!(Dataset::new(vec![0.0], 2, vec![0], names(2)).is_err());
    }
}
