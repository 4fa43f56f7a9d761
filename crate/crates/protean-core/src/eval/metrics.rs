use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::nn::{forward, forward_embedding, Mode, ModelParams};
use crate::prototype::{nearest_prototype_classify, PrototypeSet};
use crate::{Error, Result};

const CHUNK: usize = 256;

/// A trained predictor.
#[derive(Debug, Clone, Copy)]
pub enum Classifier<'a> {
    /// Arg-max of the classification head; ties go to the smallest class id.
    Head(&'a ModelParams),
    /// Nearest prototype to the embedding of the sample.
    NearestPrototype { model: &'a ModelParams, prototypes: &'a PrototypeSet },
}

impl Classifier<'_> {
    pub fn model(&self) -> &ModelParams {
        match self {
            Classifier::Head(m) | Classifier::NearestPrototype { model: m, .. } => m,
        }
    }

    /// Predicted class per row of `features`, in eval mode.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<usize>> {
        let model = self.model();
        let f = model.input_dim;
        if features.len() % f != 0 {
            return Err(Error::dims("feature matrix width", f, features.len() % f));
        }
        let mut out = Vec::with_capacity(features.len() / f);
        for chunk in features.chunks(CHUNK * f) {
            match self {
                Classifier::Head(m) => {
                    let fwd = forward(m, chunk, Mode::Eval)?;
                    for row in 0..fwd.batch {
                        let lp = fwd.log_prob_row(row);
                        let mut best = 0;
                        for (j, &v) in lp.iter().enumerate() {
                            if v > lp[best] {
                                best = j;
                            }
                        }
                        out.push(best);
                    }
                }
                Classifier::NearestPrototype { model, prototypes } => {
                    let fwd = forward_embedding(model, chunk, Mode::Eval)?;
                    for row in 0..fwd.batch {
                        out.push(nearest_prototype_classify(fwd.embedding(row), prototypes)?);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalScope {
    Global,
    Participant(usize),
}

/// How per-class precision and F1 are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    /// Unweighted mean over classes present in the test set.
    #[default]
    Macro,
    /// Mean weighted by test-set class support.
    Weighted,
}

/// Metrics derived from a confusion matrix (rows: true class, columns:
/// prediction). Macro averages run over classes with a nonzero row; a class
/// with no predicted samples has precision 0 and is listed in
/// `zero_division_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scope: EvalScope,
    pub num_classes: usize,
    pub confusion: Vec<u64>,
    pub samples: u64,
    pub accuracy: f64,
    pub macro_accuracy: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_f1: f64,
    /// Recall per class; `None` for classes absent from the test set.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub per_class_precision: Vec<Option<f64>>,
    pub per_class_f1: Vec<Option<f64>>,
    pub zero_division_classes: Vec<usize>,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<u64>, num_classes: usize, scope: EvalScope) -> Result<Self> {
        let k = num_classes;
        if confusion.len() != k * k {
            return Err(Error::dims("confusion matrix", k * k, confusion.len()));
        }
        let samples: u64 = confusion.iter().sum();
        if samples == 0 {
            return Err(Error::Empty("test set"));
        }
        let row = |j: usize| confusion[j * k..(j + 1) * k].iter().sum::<u64>();
        let col = |j: usize| (0..k).map(|i| confusion[i * k + j]).sum::<u64>();
        let correct: u64 = (0..k).map(|j| confusion[j * k + j]).sum();

        let mut per_class_accuracy = vec![None; k];
        let mut per_class_precision = vec![None; k];
        let mut per_class_f1 = vec![None; k];
        let mut zero_division_classes = Vec::new();
        let (mut present, mut sum_acc, mut sum_prec, mut sum_f1) = (0usize, 0.0, 0.0, 0.0);
        let (mut w_prec, mut w_f1) = (0.0, 0.0);
        for j in 0..k {
            let support = row(j);
            if support == 0 {
                continue;
            }
            let tp = confusion[j * k + j] as f64;
            let recall = tp / support as f64;
            let predicted = col(j);
            let precision = if predicted == 0 {
                zero_division_classes.push(j);
                0.0
            } else {
                tp / predicted as f64
            };
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            per_class_accuracy[j] = Some(recall);
            per_class_precision[j] = Some(precision);
            per_class_f1[j] = Some(f1);
            present += 1;
            sum_acc += recall;
            sum_prec += precision;
            sum_f1 += f1;
            let w = support as f64 / samples as f64;
            w_prec += w * precision;
            w_f1 += w * f1;
        }
        let p = present as f64;
        Ok(MetricsReport {
            scope,
            num_classes: k,
            samples,
            accuracy: correct as f64 / samples as f64,
            macro_accuracy: sum_acc / p,
            macro_precision: sum_prec / p,
            macro_f1: sum_f1 / p,
            weighted_precision: w_prec,
            weighted_f1: w_f1,
            per_class_accuracy,
            per_class_precision,
            per_class_f1,
            zero_division_classes,
            confusion,
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], num_classes: usize, scope: EvalScope) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::dims("predictions", truth.len(), predicted.len()));
        }
        let mut confusion = vec![0u64; num_classes * num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: t.max(p),
                    num_classes,
                });
            }
            confusion[t * num_classes + p] += 1;
        }
        Self::from_confusion(confusion, num_classes, scope)
    }

    pub fn confusion_entry(&self, truth: usize, predicted: usize) -> u64 {
        self.confusion[truth * self.num_classes + predicted]
    }

    pub fn precision(&self, averaging: Averaging) -> f64 {
        match averaging {
            Averaging::Macro => self.macro_precision,
            Averaging::Weighted => self.weighted_precision,
        }
    }

    pub fn f1(&self, averaging: Averaging) -> f64 {
        match averaging {
            Averaging::Macro => self.macro_f1,
            Averaging::Weighted => self.weighted_f1,
        }
    }
}

/// Evaluates `classifier` on `test`.
pub fn evaluate(classifier: &Classifier<'_>, test: &Dataset, scope: EvalScope) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let model = classifier.model();
    if test.num_classes() != model.num_classes {
        return Err(Error::dims("test classes", model.num_classes, test.num_classes()));
    }
    let predicted = classifier.predict(&test.features)?;
    MetricsReport::from_predictions(&test.labels, &predicted, model.num_classes, scope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_model_with, Architecture};
    use proptest::prelude::*;

    #[test]
    fn perfect_predictor() {
        let r = MetricsReport::from_predictions(&[0, 1, 2, 2], &[0, 1, 2, 2], 3, EvalScope::Global).unwrap();
        for v in [r.accuracy, r.macro_accuracy, r.macro_precision, r.macro_f1, r.weighted_f1] {
            assert_eq!(v, 1.0);
        }
        assert!(r.zero_division_classes.is_empty());
    }

    #[test]
    fn constant_predictor_on_balanced_pair() {
        let r = MetricsReport::from_predictions(&[0, 0, 1, 1], &[0, 0, 0, 0], 2, EvalScope::Global).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.macro_accuracy, 0.5);
        assert_eq!(r.macro_precision, 0.25);
        assert_eq!(r.zero_division_classes, vec![1]);
        assert!((r.macro_f1 - (2.0 * 0.5 / 1.5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn classes_absent_from_test_are_skipped() {
        let r = MetricsReport::from_predictions(&[0, 0, 2], &[0, 1, 2], 3, EvalScope::Participant(1)).unwrap();
        assert_eq!(r.per_class_accuracy, vec![Some(0.5), None, Some(1.0)]);
        assert_eq!(r.macro_accuracy, 0.75);
    }

    #[test]
    fn head_and_prototype_classifiers_predict() {
        let model = build_model_with(Architecture::Mlp { hidden: 3 }, 2, 2, 0).unwrap();
        let x = [0.1, 0.2, -1.0, 3.0, 2.0, 2.0];
        let head = Classifier::Head(&model).predict(&x).unwrap();
        let fwd = forward(&model, &x, Mode::Eval).unwrap();
        for (row, &p) in head.iter().enumerate() {
            let lp = fwd.log_prob_row(row);
            assert!(lp[p] >= lp[1 - p]);
        }
        let protos = PrototypeSet::from_parts(3, vec![0.0; 6], vec![0, 4]).unwrap();
        let near = Classifier::NearestPrototype {
            model: &model,
            prototypes: &protos,
        };
        assert_eq!(near.predict(&x).unwrap(), vec![1, 1, 1]);
        assert!(near.predict(&x[..5]).is_err());
    }

    fn oracle(conf: &[u64], k: usize) -> (f64, f64, f64, f64) {
        let mut recalls = Vec::new();
        let mut precisions = Vec::new();
        let mut f1s = Vec::new();
        let total: u64 = conf.iter().sum();
        let mut diag = 0;
        for j in 0..k {
            diag += conf[j * k + j];
            let mut row = 0;
            let mut col = 0;
            for i in 0..k {
                row += conf[j * k + i];
                col += conf[i * k + j];
            }
            if row == 0 {
                continue;
            }
            let r = conf[j * k + j] as f64 / row as f64;
            let p = if col == 0 { 0.0 } else { conf[j * k + j] as f64 / col as f64 };
            recalls.push(r);
            precisions.push(p);
            f1s.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        (diag as f64 / total as f64, mean(&recalls), mean(&precisions), mean(&f1s))
    }

    proptest! {
        #[test]
        fn metrics_match_recomputation(k in 2usize..6, cells in proptest::collection::vec(0u64..20, 36)) {
            let mut conf: Vec<u64> = cells[..k * k].to_vec();
            conf[0] += 1;
            let r = MetricsReport::from_confusion(conf.clone(), k, EvalScope::Global).unwrap();
            let (acc, macc, mp, mf) = oracle(&conf, k);
            prop_assert!((r.accuracy - acc).abs() < 1e-12);
            prop_assert!((r.macro_accuracy - macc).abs() < 1e-12);
            prop_assert!((r.macro_precision - mp).abs() < 1e-12);
            prop_assert!((r.macro_f1 - mf).abs() < 1e-12);
            prop_assert_eq!(r.samples, conf.iter().sum::<u64>());
            for v in [r.accuracy, r.macro_accuracy, r.macro_precision, r.macro_f1, r.weighted_precision, r.weighted_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn macro_accuracy_ignores_class_rebalancing(
            truth in proptest::collection::vec(0usize..3, 1..40),
            pred_seed in proptest::collection::vec(0usize..3, 40),
            dup in 0usize..3,
        ) {
            let pred: Vec<usize> = truth.iter().zip(&pred_seed).map(|(_, &p)| p).collect();
            let a = MetricsReport::from_predictions(&truth, &pred, 3, EvalScope::Global).unwrap();
            let (mut t2, mut p2) = (truth.clone(), pred.clone());
            for (&t, &p) in truth.iter().zip(&pred) {
                if t == dup {
                    t2.push(t);
                    p2.push(p);
                }
            }
            let b = MetricsReport::from_predictions(&t2, &p2, 3, EvalScope::Global).unwrap();
            prop_assert!((a.macro_accuracy - b.macro_accuracy).abs() < 1e-12);
        }
    }
}
