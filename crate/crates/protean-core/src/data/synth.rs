use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// K isotropic unit-variance Gaussian classes in F dimensions.
///
/// Class means sit at `±(separation/√2)·e_c` on the coordinate axes, so any
/// two means are at least `separation` apart; classes beyond `2F` get random
/// directions of the same norm. Rows are grouped by class.
pub fn synthesize_gaussian(num_classes: usize, num_features: usize, per_class: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::invalid("num_classes", "need at least 2 classes"));
    }
    if num_features < 4 {
        return Err(Error::invalid("num_features", "need at least 4 features"));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::invalid("separation", "must be finite and non-negative"));
    }
    let mut rng = rng::stream(seed, Stream::Synthetic, 0);
    let radius = separation / core::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|j| {
            let mut mean = alloc::vec![0.0; num_features];
            if j < 2 * num_features {
                let sign = if j < num_features { 1.0 } else { -1.0 };
                mean[j % num_features] = sign * radius;
            } else {
                let dir: Vec<f64> = (0..num_features).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = libm::sqrt(dir.iter().map(|v| v * v).sum::<f64>());
                for (m, v) in mean.iter_mut().zip(&dir) {
                    *m = radius * v / norm;
                }
            }
            mean
        })
        .collect();

    let mut features = Vec::with_capacity(num_classes * per_class * num_features);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for (j, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(m + z);
            }
            labels.push(j);
        }
    }
    let names = (0..num_classes).map(|j| format!("class_{j}")).collect();
    Dataset::new(features, num_features, labels, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: classify by the closest empirical class centroid.
    fn centroid_accuracy(train: &Dataset, test: &Dataset) -> f64 {
        let (k, f) = (train.num_classes(), train.num_features);
        let mut centroids = vec![vec![0.0; f]; k];
        let counts = train.class_counts();
        for i in 0..train.len() {
            for c in 0..f {
                centroids[train.labels[i]][c] += train.row(i)[c] / counts[train.labels[i]] as f64;
            }
        }
        let correct = (0..test.len())
            .filter(|&i| {
                let x = test.row(i);
                let best = (0..k)
                    .min_by(|&a, &b| {
                        let da: f64 = x.iter().zip(&centroids[a]).map(|(u, v)| (u - v).powi(2)).sum();
                        let db: f64 = x.iter().zip(&centroids[b]).map(|(u, v)| (u - v).powi(2)).sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                best == test.labels[i]
            })
            .count();
        correct as f64 / test.len() as f64
    }

    #[test]
    fn wide_separation_is_centroid_separable() {
        for seed in 0..3 {
            let train = synthesize_gaussian(6, 16, 200, 10.0, seed).unwrap();
            let test = synthesize_gaussian(6, 16, 200, 10.0, seed + 100).unwrap();
            assert!(centroid_accuracy(&train, &test) >= 0.99);
        }
    }

    #[test]
    fn zero_separation_is_chance() {
        let train = synthesize_gaussian(4, 8, 500, 0.0, 1).unwrap();
        let test = synthesize_gaussian(4, 8, 500, 0.0, 2).unwrap();
        let acc = centroid_accuracy(&train, &test);
        assert!((acc - 0.25).abs() <= 0.05, "accuracy {acc}");
    }

    #[test]
    fn seeded_and_validated() {
        assert_eq!(synthesize_gaussian(3, 4, 5, 2.0, 9).unwrap(), synthesize_gaussian(3, 4, 5, 2.0, 9).unwrap());
        assert!(synthesize_gaussian(1, 4, 5, 2.0, 9).is_err());
        assert!(synthesize_gaussian(3, 3, 5, 2.0, 9).is_err());
        let many = synthesize_gaussian(10, 4, 3, 2.0, 9).unwrap();
        assert_eq!(many.class_counts(), vec![3; 10]);
    }
}
