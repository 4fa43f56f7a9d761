//! Newline-delimited JSON metric records.
//!
//! Every line is one object carrying `schema` and `kind` next to the record
//! body, so files can be appended to and parsed line by line.

use std::io::BufRead;
use std::path::Path;

use protean_core::eval::{MetricsReport, RareClassEntry, ZeroShotEntry};
use protean_core::fed::{RoundReport, StrategyKind};
use protean_core::audit::AuditEntry;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Coordinates of one training run inside an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Round {
        cell: Cell,
        strategy: StrategyKind,
        /// Objective before the first round.
        initial_objective: f64,
        report: RoundReport,
    },
    /// Test metrics of one participant's deployed classifier.
    Metrics {
        cell: Cell,
        strategy: StrategyKind,
        participant: usize,
        report: MetricsReport,
    },
    RareClass {
        cell: Cell,
        entry: RareClassEntry,
    },
    ZeroShot {
        cell: Cell,
        strategy: StrategyKind,
        entry: ZeroShotEntry,
    },
    Audit {
        cell: Cell,
        strategy: StrategyKind,
        dp_sigma: f64,
        entry: AuditEntry,
    },
    /// Utility of a retrained run at one noise level.
    DpUtility {
        cell: Cell,
        strategy: StrategyKind,
        dp_sigma: f64,
        macro_f1: f64,
        macro_accuracy: f64,
    },
}

#[derive(Serialize, Deserialize)]
struct Line<R> {
    schema: u32,
    #[serde(flatten)]
    record: R,
}

/// Renders records as NDJSON text.
pub fn to_ndjson<'a>(records: impl IntoIterator<Item = &'a Record>) -> String {
    let mut out = String::new();
    for record in records {
        let line = Line { schema: SCHEMA_VERSION, record };
        out.push_str(&serde_json::to_string(&line).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Parses an NDJSON file, rejecting unknown schema versions.
pub fn read_ndjson(path: &Path) -> Result<Vec<Record>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line<Record> = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        if parsed.schema != SCHEMA_VERSION {
            return Err(Error::format(path, format!("line {}: unsupported schema version {}", n + 1, parsed.schema)));
        }
        records.push(parsed.record);
    }
    Ok(records)
}
