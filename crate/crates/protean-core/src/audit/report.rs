use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{reconstruct_profile, AttackConfig};
use crate::data::{Dataset, Normalizer};
use crate::eval::{evaluate, EvalScope};
use crate::fed::{participant_classifier, run_federation, Executor, FederationConfig};
use crate::nn::ModelParams;
use crate::prototype::PrototypeSet;
use crate::rng::{self, Stream};
use crate::{Error, Result};

/// Per-feature mean of the samples of `class` in `shard`.
pub fn class_mean_profile(shard: &Dataset, class: usize) -> Result<Vec<f64>> {
    let f = shard.num_features;
    let mut sum = vec![0.0; f];
    let mut n = 0usize;
    for (row, &label) in shard.features.chunks(f).zip(&shard.labels) {
        if label == class {
            n += 1;
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
    }
    if n == 0 {
        return Err(Error::AbsentClass(class));
    }
    sum.iter_mut().for_each(|s| *s /= n as f64);
    Ok(sum)
}

/// Per-feature squared error of uniform guesses within `bounds` against
/// `class_mean`, averaged over `trials` draws.
pub fn random_baseline_feature_mse(bounds: &[(f64, f64)], class_mean: &[f64], trials: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(Error::invalid("trials", "need at least one trial"));
    }
    if bounds.len() != class_mean.len() {
        return Err(Error::dims("feature bounds", class_mean.len(), bounds.len()));
    }
    let mut acc = vec![0.0; bounds.len()];
    for _ in 0..trials {
        for ((a, &(lo, hi)), m) in acc.iter_mut().zip(bounds).zip(class_mean) {
            let guess = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            *a += (guess - m) * (guess - m);
        }
    }
    acc.iter_mut().for_each(|a| *a /= trials as f64);
    Ok(acc)
}

/// Mean over features of [`random_baseline_feature_mse`].
pub fn random_baseline_mse(bounds: &[(f64, f64)], class_mean: &[f64], trials: usize, rng: &mut impl Rng) -> Result<f64> {
    let per = random_baseline_feature_mse(bounds, class_mean, trials, rng)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    /// `10·log10(range² / mse)` per feature; `None` where excluded.
    pub per_feature: Vec<Option<f64>>,
    /// Mean over features with a finite value.
    pub mean: f64,
    pub zero_range_features: Vec<usize>,
    /// Features reconstructed exactly (infinite PSNR).
    pub exact_features: Vec<usize>,
}

/// Per-feature PSNR; zero-range features are excluded and listed.
pub fn psnr(mse: &[f64], ranges: &[f64]) -> Result<Psnr> {
    if mse.len() != ranges.len() {
        return Err(Error::dims("feature ranges", mse.len(), ranges.len()));
    }
    let mut per_feature = Vec::with_capacity(mse.len());
    let (mut zero_range_features, mut exact_features) = (Vec::new(), Vec::new());
    let (mut sum, mut n) = (0.0, 0usize);
    for (f, (&e, &r)) in mse.iter().zip(ranges).enumerate() {
        if !(r > 0.0) {
            zero_range_features.push(f);
            per_feature.push(None);
        } else if e <= 0.0 {
            exact_features.push(f);
            per_feature.push(None);
        } else {
            let v = 10.0 * libm::log10(r * r / e);
            sum += v;
            n += 1;
            per_feature.push(Some(v));
        }
    }
    if zero_range_features.len() == mse.len() {
        return Err(Error::invalid("ranges", "every feature has zero range"));
    }
    Ok(Psnr {
        per_feature,
        mean: if n > 0 { sum / n as f64 } else { f64::INFINITY },
        zero_range_features,
        exact_features,
    })
}

/// What the attacker sees, and the data needed to score it.
#[derive(Debug, Clone, Copy)]
pub struct AuditTarget<'a> {
    /// Each participant's model as held by the server.
    pub models: &'a [ModelParams],
    /// Each participant's shared prototypes.
    pub prototypes: &'a [PrototypeSet],
    /// Each participant's training shard, in model input space.
    pub shards: &'a [Dataset],
    /// Maps model inputs back to raw feature units.
    pub normalizer: &'a Normalizer,
    /// Raw per-feature training `(min, max)`.
    pub raw_bounds: &'a [(f64, f64)],
}

/// One attacked (participant, class) pair; all errors are in raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub participant: usize,
    pub class: usize,
    pub profile: Vec<f64>,
    pub class_mean: Vec<f64>,
    pub reconstructed_mse: f64,
    pub random_mse: f64,
    pub reconstructed_psnr: Psnr,
    pub random_psnr: Psnr,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub dp_sigma: f64,
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn fraction_below_random(&self) -> f64 {
        let below = self.entries.iter().filter(|e| e.reconstructed_mse < e.random_mse).count();
        below as f64 / self.entries.len().max(1) as f64
    }

    pub fn mean_reconstructed_mse(&self) -> f64 {
        self.entries.iter().map(|e| e.reconstructed_mse).sum::<f64>() / self.entries.len().max(1) as f64
    }

    pub fn mean_random_mse(&self) -> f64 {
        self.entries.iter().map(|e| e.random_mse).sum::<f64>() / self.entries.len().max(1) as f64
    }
}

fn audit_pair(target: &AuditTarget<'_>, bounds: &[(f64, f64)], i: usize, class: usize, cfg: &AttackConfig, trials: usize, seed: u64) -> Result<AuditEntry> {
    let k = target.prototypes[i].num_classes() as u64;
    let index = i as u64 * k + class as u64;
    let proto = target.prototypes[i].get(class).ok_or(Error::AbsentClass(class))?;
    let mut attack_rng = rng::stream(seed, Stream::Attack, index);
    let rec = reconstruct_profile(&target.models[i], proto, bounds, cfg, &mut attack_rng)?;
    let profile = target.normalizer.inverse_row(&rec.profile);
    let class_mean = target.normalizer.inverse_row(&class_mean_profile(&target.shards[i], class)?);
    let rec_feature: Vec<f64> = profile.iter().zip(&class_mean).map(|(a, b)| (a - b) * (a - b)).collect();
    let mut baseline_rng = rng::stream(seed, Stream::Baseline, index);
    let random_feature = random_baseline_feature_mse(target.raw_bounds, &class_mean, trials, &mut baseline_rng)?;
    let ranges: Vec<f64> = target.raw_bounds.iter().map(|(lo, hi)| hi - lo).collect();
    let f = rec_feature.len() as f64;
    Ok(AuditEntry {
        participant: i,
        class,
        reconstructed_mse: rec_feature.iter().sum::<f64>() / f,
        random_mse: random_feature.iter().sum::<f64>() / f,
        reconstructed_psnr: psnr(&rec_feature, &ranges)?,
        random_psnr: psnr(&random_feature, &ranges)?,
        profile,
        class_mean,
        iterations: rec.iterations,
        objective: rec.objective,
    })
}

/// Attacks every present (participant, class) prototype.
pub fn audit_participants<E: Executor>(
    target: &AuditTarget<'_>,
    cfg: &AttackConfig,
    baseline_trials: usize,
    seed: u64,
    dp_sigma: f64,
    executor: &E,
) -> Result<AuditReport> {
    let m = target.models.len();
    if target.prototypes.len() != m || target.shards.len() != m {
        return Err(Error::dims("audit participants", m, target.prototypes.len().min(target.shards.len())));
    }
    let bounds = target.normalizer.transform_bounds(target.raw_bounds);
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| target.prototypes[i].present_classes().map(move |j| (i, j))).collect();
    let results = executor.map_vec(pairs, |_, (i, j)| audit_pair(target, &bounds, i, j, cfg, baseline_trials, seed).map_err(|e| e.in_participant(i)));
    let entries = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(AuditReport { dp_sigma, entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSweepPoint {
    pub sigma: f64,
    pub audit: AuditReport,
    /// Participant mean of test macro F1.
    pub macro_f1: f64,
    pub macro_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSweep {
    pub points: Vec<DpSweepPoint>,
    /// Whether mean reconstructed MSE never decreases as σ grows.
    pub mse_nondecreasing: bool,
}

/// Retrains `cfg` once per noise level, attacks the shared prototypes and
/// scores utility on `test`.
#[allow(clippy::too_many_arguments)]
pub fn dp_sweep<E: Executor>(
    cfg: &FederationConfig,
    shards: &[Dataset],
    test: &Dataset,
    normalizer: &Normalizer,
    raw_bounds: &[(f64, f64)],
    sigmas: &[f64],
    attack: &AttackConfig,
    baseline_trials: usize,
    executor: &E,
) -> Result<DpSweep> {
    let mut points = Vec::with_capacity(sigmas.len());
    let mut ordered: Vec<f64> = sigmas.to_vec();
    ordered.sort_by(f64::total_cmp);
    for &sigma in &ordered {
        let run_cfg = FederationConfig { dp_sigma: sigma, ..*cfg };
        let run = run_federation(&run_cfg, shards, executor, |_, _| {})?;
        let target = AuditTarget {
            models: &run.state.locals,
            prototypes: &run.state.uploaded_prototypes,
            shards,
            normalizer,
            raw_bounds,
        };
        let audit = audit_participants(&target, attack, baseline_trials, cfg.seed, sigma, executor)?;
        let mode = cfg.strategy.default_inference();
        let (mut f1, mut acc) = (0.0, 0.0);
        for i in 0..shards.len() {
            let classifier = participant_classifier(&run.state, &cfg.strategy, i, mode);
            let r = evaluate(&classifier, test, EvalScope::Participant(i))?;
            f1 += r.macro_f1;
            acc += r.macro_accuracy;
        }
        let m = shards.len() as f64;
        points.push(DpSweepPoint {
            sigma,
            audit,
            macro_f1: f1 / m,
            macro_accuracy: acc / m,
        });
    }
    let mse_nondecreasing = points.windows(2).all(|w| w[1].audit.mean_reconstructed_mse() >= w[0].audit.mean_reconstructed_mse());
    Ok(DpSweep { points, mse_nondecreasing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};

    #[test]
    fn class_means() {
        let d = Dataset::new(alloc::vec![0.0, 2.0, 2.0, 0.0, 5.0, 5.0], 2, alloc::vec![0, 0, 1], alloc::vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(class_mean_profile(&d, 0).unwrap(), alloc::vec![1.0, 1.0]);
        assert_eq!(class_mean_profile(&d, 1).unwrap(), alloc::vec![5.0, 5.0]);
        let shuffled = d.subset(&[2, 1, 0]);
        assert_eq!(class_mean_profile(&shuffled, 0).unwrap(), alloc::vec![1.0, 1.0]);
        let one = d.subset(&[0, 2]);
        assert!(matches!(class_mean_profile(&one.subset(&[0]), 1), Err(Error::AbsentClass(1))));
    }

    #[test]
    fn uniform_baseline_variance() {
        let mut rng = rng::stream(0, Stream::Baseline, 0);
        let mse = random_baseline_mse(&[(0.0, 1.0)], &[0.5], 100_000, &mut rng).unwrap();
        assert!((mse - 1.0 / 12.0).abs() < 0.005, "{mse}");
        assert_eq!(random_baseline_mse(&[(0.3, 0.3)], &[0.3], 10, &mut rng).unwrap(), 0.0);
        assert!(random_baseline_mse(&[(0.0, 1.0)], &[0.5], 0, &mut rng).is_err());
    }

    #[test]
    fn psnr_closed_forms() {
        let p = psnr(&[4.0, 0.04, 1.0, 0.0], &[2.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(p.per_feature[0].unwrap().abs() < 1e-12);
        assert!((p.per_feature[1].unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(p.zero_range_features, alloc::vec![2]);
        assert_eq!(p.exact_features, alloc::vec![3]);
        assert!((p.mean - 10.0).abs() < 1e-12);
        assert!(psnr(&[1.0], &[0.0]).is_err());
    }
}
