use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::MetricsReport;
use crate::{Error, Result};

/// The two classes with the fewest training samples; ties go to the smaller
/// class id and zero counts are eligible.
pub fn select_rare_classes(counts: &[usize]) -> Result<[usize; 2]> {
    if counts.len() < 2 {
        return Err(Error::invalid("counts", "need at least 2 classes"));
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&j| (counts[j], j));
    Ok([order[0], order[1]])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAccuracy {
    pub method: String,
    /// Test accuracy on each selected class.
    pub per_class: [Option<f64>; 2],
    /// Mean over the selected classes present in the test set.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareClassEntry {
    pub participant: usize,
    pub classes: [usize; 2],
    pub train_counts: [usize; 2],
    pub methods: Vec<MethodAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareClassReport {
    pub entries: Vec<RareClassEntry>,
}

impl RareClassReport {
    /// Per-participant rare-class accuracies of `method`, skipping
    /// participants whose rare classes are all missing from the test set.
    pub fn accuracies(&self, method: &str) -> Vec<f64> {
        self.entries
            .iter()
            .filter_map(|e| e.methods.iter().find(|m| m.method == method).and_then(|m| m.mean))
            .collect()
    }
}

/// Rare-class accuracies per participant.
///
/// `counts[i]` is participant i's training count per class; each method
/// supplies one `MetricsReport` per participant.
pub fn rare_class_report(counts: &[Vec<usize>], methods: &[(&str, &[MetricsReport])]) -> Result<RareClassReport> {
    let mut entries = Vec::with_capacity(counts.len());
    for (i, row) in counts.iter().enumerate() {
        let classes = select_rare_classes(row)?;
        let mut accs = Vec::with_capacity(methods.len());
        for (name, reports) in methods {
            let report = reports.get(i).ok_or(Error::dims("participant reports", counts.len(), reports.len()))?;
            let per_class = classes.map(|c| report.per_class_accuracy.get(c).copied().flatten());
            let present: Vec<f64> = per_class.iter().flatten().copied().collect();
            let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
            accs.push(MethodAccuracy {
                method: String::from(*name),
                per_class,
                mean,
            });
        }
        entries.push(RareClassEntry {
            participant: i,
            classes,
            train_counts: classes.map(|c| row[c]),
            methods: accs,
        });
    }
    Ok(RareClassReport { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotEntry {
    pub participant: usize,
    pub class: usize,
    pub local_only: Option<f64>,
    pub federated: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub entries: Vec<ZeroShotEntry>,
}

impl ZeroShotReport {
    fn mean_of(&self, pick: impl Fn(&ZeroShotEntry) -> Option<f64>) -> Option<f64> {
        let v: Vec<f64> = self.entries.iter().filter_map(pick).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_local_only(&self) -> Option<f64> {
        self.mean_of(|e| e.local_only)
    }

    pub fn mean_federated(&self) -> Option<f64> {
        self.mean_of(|e| e.federated)
    }
}

/// Test accuracy on every class a participant never trained on, under
/// local-only training and under federation.
pub fn zero_shot_report(missing: &[Vec<usize>], local_only: &[MetricsReport], federated: &[MetricsReport]) -> Result<ZeroShotReport> {
    if local_only.len() != missing.len() || federated.len() != missing.len() {
        return Err(Error::dims("participant reports", missing.len(), local_only.len().min(federated.len())));
    }
    let mut entries = Vec::new();
    for (i, classes) in missing.iter().enumerate() {
        for &class in classes {
            entries.push(ZeroShotEntry {
                participant: i,
                class,
                local_only: local_only[i].per_class_accuracy.get(class).copied().flatten(),
                federated: federated[i].per_class_accuracy.get(class).copied().flatten(),
            });
        }
    }
    Ok(ZeroShotReport { entries })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
    } else {
        0.0
    };
    Some(Summary { mean, sd, n: values.len() })
}
