//! Summary tables derived from metric records.
//!
//! Both `run` and `report` go through [`derive_tables`], so re-deriving from
//! stored records reproduces the run's tables byte for byte.

use std::collections::BTreeMap;

use protean_core::eval::{mann_whitney_u, summarize, Summary};
use protean_core::fed::StrategyKind;

use crate::records::Record;

/// Order-preserving distinct values.
fn distinct<T: PartialEq + Copy>(values: impl IntoIterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `mean (sd)` in percent.
fn cell(s: Option<Summary>) -> String {
    match s {
        Some(s) if s.n > 1 => format!("{:.2} ({:.2})", 100.0 * s.mean, 100.0 * s.sd),
        Some(s) => format!("{:.2}", 100.0 * s.mean),
        None => "-".to_string(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

const METRICS: [&str; 6] = ["macro_accuracy", "accuracy", "macro_precision", "macro_f1", "weighted_precision", "weighted_f1"];

/// Participant-mean metric values keyed by (alpha bits, strategy, seed).
struct SeedMetrics {
    alphas: Vec<f64>,
    strategies: Vec<StrategyKind>,
    values: BTreeMap<(u64, StrategyKind), Vec<[f64; 6]>>,
}

fn seed_metrics(records: &[Record]) -> SeedMetrics {
    let mut per_seed: BTreeMap<(u64, StrategyKind), Vec<(u64, Vec<[f64; 6]>)>> = BTreeMap::new();
    let mut alphas = Vec::new();
    let mut strategies = Vec::new();
    for r in records {
        if let Record::Metrics { cell, strategy, report, .. } = r {
            alphas.push(cell.alpha);
            strategies.push(*strategy);
            let row = [report.macro_accuracy, report.accuracy, report.macro_precision, report.macro_f1, report.weighted_precision, report.weighted_f1];
            let seeds = per_seed.entry((cell.alpha.to_bits(), *strategy)).or_default();
            match seeds.iter_mut().find(|(s, _)| *s == cell.seed) {
                Some((_, rows)) => rows.push(row),
                None => seeds.push((cell.seed, vec![row])),
            }
        }
    }
    let values = per_seed
        .into_iter()
        .map(|(key, seeds)| {
            let means = seeds
                .into_iter()
                .map(|(_, rows)| {
                    let mut m = [0.0; 6];
                    for (k, slot) in m.iter_mut().enumerate() {
                        *slot = mean(&rows.iter().map(|r| r[k]).collect::<Vec<_>>());
                    }
                    m
                })
                .collect();
            (key, means)
        })
        .collect();
    SeedMetrics {
        alphas: distinct(alphas),
        strategies: distinct(strategies),
        values,
    }
}

impl SeedMetrics {
    fn summary(&self, alpha: f64, strategy: StrategyKind, metric: usize) -> Option<Summary> {
        let rows = self.values.get(&(alpha.to_bits(), strategy))?;
        summarize(&rows.iter().map(|r| r[metric]).collect::<Vec<_>>())
    }
}

/// Strategy × α grid of macro accuracy, `mean (sd)` over seeds, in percent.
fn table1(m: &SeedMetrics) -> (String, String) {
    let header: Vec<String> = std::iter::once("strategy".to_string()).chain(m.alphas.iter().map(|a| format!("alpha={a}"))).collect();
    let rows: Vec<Vec<String>> = m
        .strategies
        .iter()
        .map(|&s| std::iter::once(s.name().to_string()).chain(m.alphas.iter().map(|&a| cell(m.summary(a, s, 0)))).collect())
        .collect();
    let csv = csv_text(&header.iter().map(String::as_str).collect::<Vec<_>>(), rows.clone());
    let mut md = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for row in rows {
        md.push_str(&format!("| {} |\n", row.join(" | ")));
    }
    (csv, md)
}

fn comparison(m: &SeedMetrics) -> String {
    let mut rows = Vec::new();
    for &a in &m.alphas {
        for &s in &m.strategies {
            for (k, name) in METRICS.iter().enumerate() {
                if let Some(sum) = m.summary(a, s, k) {
                    rows.push(vec![a.to_string(), s.name().to_string(), name.to_string(), sum.mean.to_string(), sum.sd.to_string(), sum.n.to_string()]);
                }
            }
        }
    }
    csv_text(&["alpha", "strategy", "metric", "mean", "sd", "seeds"], rows)
}

/// Pooled rare-class accuracies per (α, method), with a one-sided
/// Mann-Whitney test of Protean against every other method.
fn rare_class(records: &[Record]) -> Option<String> {
    let mut pools: Vec<(f64, String, Vec<f64>)> = Vec::new();
    for r in records {
        if let Record::RareClass { cell, entry } = r {
            for m in &entry.methods {
                let Some(v) = m.mean else { continue };
                match pools.iter_mut().find(|(a, name, _)| *a == cell.alpha && *name == m.method) {
                    Some((_, _, vals)) => vals.push(v),
                    None => pools.push((cell.alpha, m.method.clone(), vec![v])),
                }
            }
        }
    }
    if pools.is_empty() {
        return None;
    }
    let reference = StrategyKind::Protean.name();
    let rows = pools
        .iter()
        .map(|(a, name, vals)| {
            let p = pools
                .iter()
                .find(|(b, n, _)| b == a && n == reference)
                .filter(|_| name != reference)
                .and_then(|(_, _, protean)| mann_whitney_u(protean, vals).ok())
                .map(|t| t.p_value);
            vec![a.to_string(), name.clone(), vals.len().to_string(), mean(vals).to_string(), opt(p)]
        })
        .collect();
    Some(csv_text(&["alpha", "method", "pairs", "mean_accuracy", "p_protean_greater"], rows))
}

fn zero_shot(records: &[Record]) -> Option<String> {
    let mut groups: Vec<(f64, StrategyKind, Vec<f64>, Vec<f64>)> = Vec::new();
    for r in records {
        if let Record::ZeroShot { cell, strategy, entry } = r {
            let g = match groups.iter_mut().position(|(a, s, _, _)| *a == cell.alpha && s == strategy) {
                Some(i) => &mut groups[i],
                None => {
                    groups.push((cell.alpha, *strategy, Vec::new(), Vec::new()));
                    groups.last_mut().unwrap()
                }
            };
            if let (Some(l), Some(f)) = (entry.local_only, entry.federated) {
                g.2.push(l);
                g.3.push(f);
            }
        }
    }
    if groups.is_empty() {
        return None;
    }
    let rows = groups
        .into_iter()
        .map(|(a, s, l, f)| {
            let m = |v: &[f64]| if v.is_empty() { String::new() } else { mean(v).to_string() };
            vec![a.to_string(), s.name().to_string(), l.len().to_string(), m(&l), m(&f)]
        })
        .collect();
    Some(csv_text(&["alpha", "strategy", "pairs", "local_only_accuracy", "federated_accuracy"], rows))
}

fn rounds(records: &[Record]) -> Option<String> {
    let mut rows = Vec::new();
    for r in records {
        if let Record::Round { cell, strategy, initial_objective, report } = r {
            let id = [cell.alpha.to_string(), cell.seed.to_string(), strategy.name().to_string()];
            if report.round == 1 {
                rows.push(id.iter().cloned().chain([0.to_string(), initial_objective.to_string(), "0".into(), "0".into(), "0".into(), "0".into()]).collect());
            }
            rows.push(
                id.iter()
                    .cloned()
                    .chain([report.round.to_string(), report.objective.to_string(), report.scalars_up.to_string(), report.scalars_down.to_string(), report.bytes_up.to_string(), report.bytes_down.to_string()])
                    .collect(),
            );
        }
    }
    (!rows.is_empty()).then(|| csv_text(&["alpha", "seed", "strategy", "round", "objective", "scalars_up", "scalars_down", "bytes_up", "bytes_down"], rows))
}

/// Per-participant random-guess vs reconstruction MSE, averaged over classes.
fn audit_bars(records: &[Record]) -> Option<String> {
    let mut groups: Vec<((u64, u64, StrategyKind, u64, usize), Vec<(f64, f64)>)> = Vec::new();
    for r in records {
        if let Record::Audit { cell, strategy, dp_sigma, entry } = r {
            let key = (cell.alpha.to_bits(), cell.seed, *strategy, dp_sigma.to_bits(), entry.participant);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push((entry.random_mse, entry.reconstructed_mse)),
                None => groups.push((key, vec![(entry.random_mse, entry.reconstructed_mse)])),
            }
        }
    }
    if groups.is_empty() {
        return None;
    }
    let rows = groups
        .into_iter()
        .map(|((a, seed, s, sigma, i), v)| {
            let random: Vec<f64> = v.iter().map(|p| p.0).collect();
            let rec: Vec<f64> = v.iter().map(|p| p.1).collect();
            vec![f64::from_bits(a).to_string(), seed.to_string(), s.name().to_string(), f64::from_bits(sigma).to_string(), i.to_string(), v.len().to_string(), mean(&random).to_string(), mean(&rec).to_string()]
        })
        .collect();
    Some(csv_text(&["alpha", "seed", "strategy", "dp_sigma", "participant", "classes", "random_mse", "reconstructed_mse"], rows))
}

/// Privacy and utility per noise level, averaged over seeds.
fn dp_sweep(records: &[Record]) -> Option<String> {
    type Key = (u64, StrategyKind, u64);
    let mut audit: Vec<(Key, Vec<(u64, f64, f64)>)> = Vec::new();
    let mut utility: Vec<(Key, Vec<(f64, f64)>)> = Vec::new();
    for r in records {
        match r {
            Record::Audit { cell, strategy, dp_sigma, entry } => {
                let key = (cell.alpha.to_bits(), *strategy, dp_sigma.to_bits());
                let v = (cell.seed, entry.reconstructed_mse, entry.random_mse);
                match audit.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, vals)) => vals.push(v),
                    None => audit.push((key, vec![v])),
                }
            }
            Record::DpUtility { cell, strategy, dp_sigma, macro_f1, macro_accuracy } => {
                let key = (cell.alpha.to_bits(), *strategy, dp_sigma.to_bits());
                match utility.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, vals)) => vals.push((*macro_f1, *macro_accuracy)),
                    None => utility.push((key, vec![(*macro_f1, *macro_accuracy)])),
                }
            }
            _ => {}
        }
    }
    if utility.is_empty() {
        return None;
    }
    let rows = utility
        .into_iter()
        .map(|(key, util)| {
            let entries = audit.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_slice()).unwrap_or(&[]);
            let rec: Vec<f64> = entries.iter().map(|e| e.1).collect();
            let below = entries.iter().filter(|e| e.1 < e.2).count();
            let m = |v: &[f64]| if v.is_empty() { String::new() } else { mean(v).to_string() };
            vec![
                f64::from_bits(key.0).to_string(),
                key.1.name().to_string(),
                f64::from_bits(key.2).to_string(),
                util.len().to_string(),
                m(&rec),
                m(&entries.iter().map(|e| e.2).collect::<Vec<_>>()),
                if entries.is_empty() { String::new() } else { (below as f64 / entries.len() as f64).to_string() },
                mean(&util.iter().map(|u| u.0).collect::<Vec<_>>()).to_string(),
                mean(&util.iter().map(|u| u.1).collect::<Vec<_>>()).to_string(),
            ]
        })
        .collect();
    Some(csv_text(&["alpha", "strategy", "dp_sigma", "seeds", "reconstructed_mse", "random_mse", "fraction_below_random", "macro_f1", "macro_accuracy"], rows))
}

/// Every table the records support, as `(file name, contents)`.
pub fn derive_tables(records: &[Record]) -> Vec<(&'static str, String)> {
    let mut out = Vec::new();
    let m = seed_metrics(records);
    if !m.values.is_empty() {
        let (csv, md) = table1(&m);
        out.push(("table1.csv", csv));
        out.push(("table1.md", md));
        out.push(("comparison.csv", comparison(&m)));
    }
    let optional = [
        ("rare_class.csv", rare_class(records)),
        ("zero_shot.csv", zero_shot(records)),
        ("rounds.csv", rounds(records)),
        ("audit_bars.csv", audit_bars(records)),
        ("dp_sweep.csv", dp_sweep(records)),
    ];
    out.extend(optional.into_iter().filter_map(|(name, t)| t.map(|t| (name, t))));
    out
}
