//! Class prototypes: per-class mean embeddings, their aggregation across
//! participants, the alignment loss, Gaussian noising and nearest-prototype
//! classification.

use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::linalg::squared_distance;
use crate::{Error, Result};

/// K class vectors of width d with presence flags.
///
/// A class is present iff its support is nonzero. The vector of an absent
/// class is all zeros and carries no meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    dim: usize,
    vectors: Vec<f64>,
    support: Vec<usize>,
}

impl PrototypeSet {
    pub fn absent(num_classes: usize, dim: usize) -> Self {
        PrototypeSet {
            dim,
            vectors: vec![0.0; num_classes * dim],
            support: vec![0; num_classes],
        }
    }

    /// Builds a set from raw parts; `support[j] == 0` marks class `j` absent.
    pub fn from_parts(dim: usize, vectors: Vec<f64>, support: Vec<usize>) -> Result<Self> {
        if vectors.len() != support.len() * dim {
            return Err(Error::dims("prototype matrix", support.len() * dim, vectors.len()));
        }
        let mut set = PrototypeSet { dim, vectors, support };
        for j in 0..set.num_classes() {
            if set.support[j] == 0 {
                set.vector_mut(j).iter_mut().for_each(|v| *v = 0.0);
            } else if set.vector(j).iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "prototype",
                    iteration: j,
                });
            }
        }
        Ok(set)
    }

    pub fn num_classes(&self) -> usize {
        self.support.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn is_present(&self, class: usize) -> bool {
        self.support.get(class).is_some_and(|&s| s > 0)
    }

    pub fn present_classes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_classes()).filter(|&j| self.support[j] > 0)
    }

    pub fn get(&self, class: usize) -> Option<&[f64]> {
        self.is_present(class).then(|| self.vector(class))
    }

    /// Row-major K × d matrix; absent rows are zero.
    pub fn as_matrix(&self) -> &[f64] {
        &self.vectors
    }

    fn vector(&self, class: usize) -> &[f64] {
        &self.vectors[class * self.dim..(class + 1) * self.dim]
    }

    fn vector_mut(&mut self, class: usize) -> &mut [f64] {
        &mut self.vectors[class * self.dim..(class + 1) * self.dim]
    }
}

/// Running `(sum, count)` per class, mergeable across batches.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeAccumulator {
    dim: usize,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl PrototypeAccumulator {
    pub fn new(num_classes: usize, dim: usize) -> Self {
        PrototypeAccumulator {
            dim,
            sums: vec![0.0; num_classes * dim],
            counts: vec![0; num_classes],
        }
    }

    pub fn add_batch(&mut self, embeddings: &[f64], labels: &[usize]) -> Result<()> {
        let d = self.dim;
        if embeddings.len() != labels.len() * d {
            return Err(Error::dims("embeddings", labels.len() * d, embeddings.len()));
        }
        let k = self.counts.len();
        for (row, &y) in embeddings.chunks(d.max(1)).zip(labels) {
            if y >= k {
                return Err(Error::LabelOutOfRange { label: y, num_classes: k });
            }
            self.counts[y] += 1;
            for (s, e) in self.sums[y * d..(y + 1) * d].iter_mut().zip(row) {
                *s += e;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &PrototypeAccumulator) -> Result<()> {
        if other.dim != self.dim || other.counts.len() != self.counts.len() {
            return Err(Error::dims("accumulator", self.sums.len(), other.sums.len()));
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn finish(&self) -> PrototypeSet {
        let d = self.dim;
        let mut vectors = self.sums.clone();
        for (j, &n) in self.counts.iter().enumerate() {
            if n > 0 {
                let inv = 1.0 / n as f64;
                vectors[j * d..(j + 1) * d].iter_mut().for_each(|v| *v *= inv);
            }
        }
        PrototypeSet {
            dim: d,
            vectors,
            support: self.counts.clone(),
        }
    }
}

/// Mean embedding per class over one batch.
pub fn compute_local_prototypes(embeddings: &[f64], labels: &[usize], num_classes: usize, dim: usize) -> Result<PrototypeSet> {
    let mut acc = PrototypeAccumulator::new(num_classes, dim);
    acc.add_batch(embeddings, labels)?;
    Ok(acc.finish())
}

/// How the global prototype of a class divides the sum of local prototypes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrototypeAveraging {
    /// Divide by the number of participants holding the class.
    #[default]
    Contributors,
    /// Divide by M, treating absent local prototypes as zero vectors.
    AllParticipants,
}

/// Global prototypes as the per-class mean over participants.
///
/// A class stays absent when no participant holds it. The global support of a
/// class is the total local support.
pub fn aggregate_global_prototypes(locals: &[PrototypeSet], averaging: PrototypeAveraging) -> Result<PrototypeSet> {
    let first = locals.first().ok_or(Error::Empty("prototype submissions"))?;
    let (k, d) = (first.num_classes(), first.dim());
    let mut sums = vec![0.0; k * d];
    let mut contributors = vec![0usize; k];
    let mut support = vec![0usize; k];
    for local in locals {
        if local.dim() != d || local.num_classes() != k {
            return Err(Error::dims("prototype width", d, local.dim()));
        }
        for j in local.present_classes() {
            contributors[j] += 1;
            support[j] += local.support[j];
            for (s, v) in sums[j * d..(j + 1) * d].iter_mut().zip(local.vector(j)) {
                *s += v;
            }
        }
    }
    for j in 0..k {
        if contributors[j] == 0 {
            continue;
        }
        let divisor = match averaging {
            PrototypeAveraging::Contributors => contributors[j],
            PrototypeAveraging::AllParticipants => locals.len(),
        } as f64;
        sums[j * d..(j + 1) * d].iter_mut().for_each(|v| *v /= divisor);
    }
    Ok(PrototypeSet { dim: d, vectors: sums, support })
}

/// Alignment loss value and its gradient with respect to the local vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentLoss {
    pub value: f64,
    /// K × d; zero rows for classes that do not contribute.
    pub gradient: Vec<f64>,
}

/// `Σ_j ‖local_j − global_j‖²` over classes present in both sets.
pub fn alignment_loss(local: &PrototypeSet, global: &PrototypeSet) -> Result<AlignmentLoss> {
    if local.dim() != global.dim() || local.num_classes() != global.num_classes() {
        return Err(Error::dims("prototype width", global.dim(), local.dim()));
    }
    let d = local.dim();
    let mut value = 0.0;
    let mut gradient = vec![0.0; local.vectors.len()];
    for j in local.present_classes().filter(|&j| global.is_present(j)) {
        let (l, g) = (local.vector(j), global.vector(j));
        for ((out, a), b) in gradient[j * d..(j + 1) * d].iter_mut().zip(l).zip(g) {
            let diff = a - b;
            value += diff * diff;
            *out = 2.0 * diff;
        }
    }
    Ok(AlignmentLoss { value, gradient })
}

/// Adds i.i.d. `N(0, σ²)` noise to every coordinate of every present class.
///
/// With `sigma == 0` the set is returned unchanged and `rng` is not touched.
pub fn add_dp_noise(protos: &PrototypeSet, sigma: f64, rng: &mut dyn RngCore) -> Result<PrototypeSet> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma", "noise scale must be finite and non-negative"));
    }
    let mut out = protos.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|_| Error::invalid("sigma", "invalid normal scale"))?;
    let d = out.dim;
    for j in 0..out.num_classes() {
        if out.support[j] == 0 {
            continue;
        }
        for v in out.vectors[j * d..(j + 1) * d].iter_mut() {
            *v += normal.sample(rng);
        }
    }
    Ok(out)
}

/// Index of the present prototype closest to `embedding` in L2; ties go to
/// the smallest class id.
pub fn nearest_prototype_classify(embedding: &[f64], global: &PrototypeSet) -> Result<usize> {
    if embedding.len() != global.dim() {
        return Err(Error::dims("embedding", global.dim(), embedding.len()));
    }
    let mut best: Option<(usize, f64)> = None;
    for j in global.present_classes() {
        let dist = squared_distance(embedding, global.vector(j));
        if best.is_none_or(|(_, b)| dist < b) {
            best = Some((j, dist));
        }
    }
    best.map(|(j, _)| j).ok_or(Error::EmptyPrototypeSet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use proptest::prelude::*;

    fn set(dim: usize, rows: &[Option<&[f64]>]) -> PrototypeSet {
        let mut vectors = Vec::new();
        let mut support = Vec::new();
        for row in rows {
            match row {
                Some(v) => {
                    vectors.extend_from_slice(v);
                    support.push(1);
                }
                None => {
                    vectors.extend(core::iter::repeat_n(0.0, dim));
                    support.push(0);
                }
            }
        }
        PrototypeSet::from_parts(dim, vectors, support).unwrap()
    }

    #[test]
    fn local_prototypes_are_class_means() {
        let p = compute_local_prototypes(&[3.0, -1.0], &[0], 2, 2).unwrap();
        assert_eq!(p.get(0), Some(&[3.0, -1.0][..]));
        assert!(!p.is_present(1));

        let p = compute_local_prototypes(&[0.0, 0.0, 2.0, 2.0], &[1, 1], 2, 2).unwrap();
        assert_eq!(p.get(1), Some(&[1.0, 1.0][..]));
        assert_eq!(p.support(), &[0, 2]);
        assert!(compute_local_prototypes(&[0.0, 0.0], &[5], 2, 2).is_err());
    }

    #[test]
    fn merged_accumulators_match_concatenation() {
        let e1 = [0.5, 1.5, -2.0, 0.25, 3.0, 3.0];
        let l1 = [0, 1, 0];
        let e2 = [1.0, 1.0, 7.0, -7.0];
        let l2 = [2, 0];
        let mut a = PrototypeAccumulator::new(3, 2);
        a.add_batch(&e1, &l1).unwrap();
        let mut b = PrototypeAccumulator::new(3, 2);
        b.add_batch(&e2, &l2).unwrap();
        a.merge(&b).unwrap();

        let all: Vec<f64> = e1.iter().chain(&e2).copied().collect();
        let labels: Vec<usize> = l1.iter().chain(&l2).copied().collect();
        let direct = compute_local_prototypes(&all, &labels, 3, 2).unwrap();
        let merged = a.finish();
        assert_eq!(merged.support(), direct.support());
        for (x, y) in merged.as_matrix().iter().zip(direct.as_matrix()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregation_averages_contributors_only() {
        let v = [1.0, 2.0];
        let w = [3.0, -2.0];
        let g = aggregate_global_prototypes(&[set(2, &[Some(&v)]), set(2, &[Some(&w)])], PrototypeAveraging::Contributors).unwrap();
        assert_eq!(g.get(0), Some(&[2.0, 0.0][..]));

        let only = [4.0, 8.0];
        let locals = [set(2, &[None, Some(&v)]), set(2, &[Some(&only), Some(&w)]), set(2, &[None, Some(&v)])];
        let g = aggregate_global_prototypes(&locals, PrototypeAveraging::Contributors).unwrap();
        assert_eq!(g.get(0), Some(&only[..]));
        let literal = aggregate_global_prototypes(&locals, PrototypeAveraging::AllParticipants).unwrap();
        assert_eq!(literal.get(0), Some(&[4.0 / 3.0, 8.0 / 3.0][..]));

        let none = aggregate_global_prototypes(&[set(2, &[None, Some(&v)])], PrototypeAveraging::Contributors).unwrap();
        assert!(!none.is_present(0));
        assert!(aggregate_global_prototypes(&[], PrototypeAveraging::Contributors).is_err());
    }

    #[test]
    fn alignment_loss_examples() {
        let a = set(2, &[Some(&[1.0, 0.0]), None]);
        let b = set(2, &[Some(&[0.0, 0.0]), Some(&[5.0, 5.0])]);
        let l = alignment_loss(&a, &b).unwrap();
        assert_eq!(l.value, 1.0);
        assert_eq!(l.gradient, vec![2.0, 0.0, 0.0, 0.0]);
        assert_eq!(alignment_loss(&b, &b).unwrap().value, 0.0);
    }

    #[test]
    fn alignment_gradient_matches_finite_differences() {
        let mut r = rng::stream(11, Stream::Attack, 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let (k, d) = (4, 5);
        let lv: Vec<f64> = (0..k * d).map(|_| normal.sample(&mut r)).collect();
        let gv: Vec<f64> = (0..k * d).map(|_| normal.sample(&mut r)).collect();
        let local = PrototypeSet::from_parts(d, lv.clone(), vec![2, 0, 1, 3]).unwrap();
        let global = PrototypeSet::from_parts(d, gv, vec![1, 1, 0, 4]).unwrap();
        let analytic = alignment_loss(&local, &global).unwrap();
        let h = 1e-5;
        for i in 0..k * d {
            let mut plus = lv.clone();
            plus[i] += h;
            let mut minus = lv.clone();
            minus[i] -= h;
            let fp = alignment_loss(&PrototypeSet::from_parts(d, plus, vec![2, 0, 1, 3]).unwrap(), &global).unwrap().value;
            let fm = alignment_loss(&PrototypeSet::from_parts(d, minus, vec![2, 0, 1, 3]).unwrap(), &global).unwrap().value;
            let numeric = (fp - fm) / (2.0 * h);
            assert!((numeric - analytic.gradient[i]).abs() < 1e-6, "coordinate {i}");
        }
    }

    #[test]
    fn dp_noise_contract() {
        let p = set(3, &[Some(&[1.0, 2.0, 3.0]), None]);
        let mut r = rng::stream(1, Stream::DpNoise, 0);
        let untouched = r.clone();
        assert_eq!(add_dp_noise(&p, 0.0, &mut r).unwrap(), p);
        assert_eq!(r, untouched);
        let noisy = add_dp_noise(&p, 1.0, &mut r).unwrap();
        assert!(!noisy.is_present(1));
        assert_eq!(noisy.support(), p.support());
        assert!(add_dp_noise(&p, -1.0, &mut r).is_err());
    }

    #[test]
    fn dp_noise_has_requested_spread() {
        // 10^5 coordinates across 10 present classes of width 10^4
        let (k, d) = (10, 10_000);
        let p = PrototypeSet::from_parts(d, vec![0.0; k * d], vec![1; k]).unwrap();
        let mut r = rng::stream(5, Stream::DpNoise, 0);
        let noisy = add_dp_noise(&p, 1.0, &mut r).unwrap();
        let n = (k * d) as f64;
        let mean: f64 = noisy.as_matrix().iter().sum::<f64>() / n;
        let var: f64 = noisy.as_matrix().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        assert!((0.98..=1.02).contains(&sd), "sd = {sd}");
    }

    #[test]
    fn nearest_prototype_rules() {
        let g = set(
            2,
            &[Some(&[0.0, 0.0]), Some(&[1.0, 0.0]), None, Some(&[5.0, 5.0]), Some(&[-1.0, 0.0])],
        );
        assert_eq!(nearest_prototype_classify(&[5.0, 5.0], &g).unwrap(), 3);
        // equidistant to classes 1 and 4
        let g2 = set(2, &[None, Some(&[1.0, 0.0]), None, None, Some(&[-1.0, 0.0])]);
        assert_eq!(nearest_prototype_classify(&[0.0, 0.0], &g2).unwrap(), 1);
        assert!(matches!(
            nearest_prototype_classify(&[0.0, 0.0], &PrototypeSet::absent(3, 2)),
            Err(Error::EmptyPrototypeSet)
        ));
        assert!(nearest_prototype_classify(&[0.0], &g).is_err());
    }

    fn brute_force_argmin(e: &[f64], g: &PrototypeSet) -> usize {
        let mut dists: Vec<(f64, usize)> = g
            .present_classes()
            .map(|j| {
                let v = g.get(j).unwrap();
                let dist: f64 = e.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
                (dist, j)
            })
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        dists[0].1
    }

    proptest! {
        #[test]
        fn classify_matches_exhaustive_scan(
            vectors in proptest::collection::vec(-5.0f64..5.0, 18),
            mask in proptest::collection::vec(any::<bool>(), 6),
            e in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            prop_assume!(mask.iter().any(|m| *m));
            let support: Vec<usize> = mask.iter().map(|&m| m as usize).collect();
            let g = PrototypeSet::from_parts(3, vectors, support).unwrap();
            prop_assert_eq!(nearest_prototype_classify(&e, &g).unwrap(), brute_force_argmin(&e, &g));
        }

        #[test]
        fn batch_prototype_is_support_weighted_mean_of_parts(
            emb in proptest::collection::vec(-10.0f64..10.0, 2 * 12),
            labels in proptest::collection::vec(0usize..3, 12),
            cut in 1usize..11,
        ) {
            let whole = compute_local_prototypes(&emb, &labels, 3, 2).unwrap();
            let a = compute_local_prototypes(&emb[..2 * cut], &labels[..cut], 3, 2).unwrap();
            let b = compute_local_prototypes(&emb[2 * cut..], &labels[cut..], 3, 2).unwrap();
            for j in whole.present_classes() {
                let (na, nb) = (a.support()[j] as f64, b.support()[j] as f64);
                for c in 0..2 {
                    let va = a.get(j).map_or(0.0, |v| v[c]);
                    let vb = b.get(j).map_or(0.0, |v| v[c]);
                    let mixed = (na * va + nb * vb) / (na + nb);
                    prop_assert!((mixed - whole.get(j).unwrap()[c]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn scaling_embeddings_scales_prototypes_and_keeps_argmin(
            emb in proptest::collection::vec(-3.0f64..3.0, 2 * 8),
            labels in proptest::collection::vec(0usize..3, 8),
            probe in proptest::collection::vec(-3.0f64..3.0, 2),
            s in 0.1f64..10.0,
        ) {
            let base = compute_local_prototypes(&emb, &labels, 3, 2).unwrap();
            let scaled_emb: Vec<f64> = emb.iter().map(|v| v * s).collect();
            let scaled = compute_local_prototypes(&scaled_emb, &labels, 3, 2).unwrap();
            for (x, y) in base.as_matrix().iter().zip(scaled.as_matrix()) {
                prop_assert!((x * s - y).abs() < 1e-9);
            }
            let scaled_probe: Vec<f64> = probe.iter().map(|v| v * s).collect();
            let a = nearest_prototype_classify(&probe, &base).unwrap();
            let b = nearest_prototype_classify(&scaled_probe, &scaled).unwrap();
            // exact ties can flip under rounding; distances must agree
            if a != b {
                let da = squared_distance(&scaled_probe, scaled.get(a).unwrap());
                let db = squared_distance(&scaled_probe, scaled.get(b).unwrap());
                prop_assert!((da - db).abs() <= 1e-9 * (1.0 + da.abs()));
            }
        }

        #[test]
        fn aggregation_is_idempotent_and_permutation_invariant(
            vectors in proptest::collection::vec(-5.0f64..5.0, 3 * 4 * 2),
            mask in proptest::collection::vec(any::<bool>(), 3 * 4),
            copies in 1usize..6,
        ) {
            let locals: Vec<PrototypeSet> = (0..3)
                .map(|i| {
                    let support = mask[i * 4..(i + 1) * 4].iter().map(|&m| m as usize * (i + 1)).collect();
                    PrototypeSet::from_parts(2, vectors[i * 8..(i + 1) * 8].to_vec(), support).unwrap()
                })
                .collect();
            let g = aggregate_global_prototypes(&locals, PrototypeAveraging::Contributors).unwrap();
            let reversed: Vec<PrototypeSet> = locals.iter().rev().cloned().collect();
            let r = aggregate_global_prototypes(&reversed, PrototypeAveraging::Contributors).unwrap();
            prop_assert_eq!(g.support(), r.support());
            for (x, y) in g.as_matrix().iter().zip(r.as_matrix()) {
                prop_assert!((x - y).abs() < 1e-12);
            }

            let same = vec![locals[0].clone(); copies];
            let idem = aggregate_global_prototypes(&same, PrototypeAveraging::Contributors).unwrap();
            for (x, y) in idem.as_matrix().iter().zip(locals[0].as_matrix()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            for j in 0..4 {
                prop_assert_eq!(idem.is_present(j), locals[0].is_present(j));
            }
        }
    }
}
