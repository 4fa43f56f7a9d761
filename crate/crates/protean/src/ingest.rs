//! CSV ingestion with a column-role schema.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use protean_core::data::Dataset;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Roles of the CSV columns. Every column that is neither the label nor
/// dropped is a feature; categorical features are label-encoded in sorted
/// order of their distinct values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub label: String,
    #[serde(default)]
    pub drop: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Classes with fewer valid rows than this are removed.
    #[serde(default = "default_min_class_count")]
    pub min_class_count: usize,
}

fn default_min_class_count() -> usize {
    1
}

impl Schema {
    pub fn load(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        crate::config::parse_toml(&text, path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub path: PathBuf,
    pub rows_read: usize,
    /// Rows with an empty, unparsable or non-finite feature value.
    pub rows_dropped: usize,
    /// Rows removed because their class fell below `min_class_count`.
    pub rows_in_removed_classes: usize,
    pub removed_classes: Vec<String>,
    pub feature_names: Vec<String>,
}

enum Role {
    Label,
    Drop,
    Numeric,
    Categorical,
}

fn data_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads a headed CSV file into a [`Dataset`].
pub fn load_csv(path: &Path, schema: &Schema) -> Result<(Dataset, LoadSummary)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| data_err(path, e.to_string()))?.clone();

    let mut roles = Vec::with_capacity(headers.len());
    let mut feature_names = Vec::new();
    for name in headers.iter() {
        let role = if name == schema.label {
            Role::Label
        } else if schema.drop.iter().any(|d| d == name) {
            Role::Drop
        } else if schema.categorical.iter().any(|c| c == name) {
            feature_names.push(name.to_string());
            Role::Categorical
        } else {
            feature_names.push(name.to_string());
            Role::Numeric
        };
        roles.push(role);
    }
    if !headers.iter().any(|h| h == schema.label) {
        return Err(data_err(path, format!("label column `{}` not found", schema.label)));
    }
    for name in schema.drop.iter().chain(&schema.categorical) {
        if !headers.iter().any(|h| h == name) {
            return Err(data_err(path, format!("schema column `{name}` not found")));
        }
    }
    if feature_names.is_empty() {
        return Err(data_err(path, "no feature columns"));
    }

    let f = feature_names.len();
    let mut raw_rows: Vec<(Vec<Option<f64>>, Vec<String>, String)> = Vec::new();
    let mut rows_read = 0;
    for record in reader.records() {
        let record = record.map_err(|e| data_err(path, e.to_string()))?;
        rows_read += 1;
        let mut numeric = Vec::with_capacity(f);
        let mut categorical = Vec::new();
        let mut label = String::new();
        for (value, role) in record.iter().zip(&roles) {
            match role {
                Role::Label => label = value.to_string(),
                Role::Drop => {}
                Role::Numeric => numeric.push(value.parse::<f64>().ok().filter(|v| v.is_finite())),
                Role::Categorical => categorical.push(value.to_string()),
            }
        }
        raw_rows.push((numeric, categorical, label));
    }

    // a numeric column that never parses is a type error, not bad rows
    let numeric_names: Vec<&String> = feature_names.iter().filter(|n| !schema.categorical.contains(n)).collect();
    for (c, name) in numeric_names.iter().enumerate() {
        let all_bad = !raw_rows.is_empty() && raw_rows.iter().all(|(n, _, _)| n[c].is_none());
        if all_bad {
            return Err(data_err(path, format!("column `{name}` is not numeric; mark it categorical or drop it")));
        }
    }

    let mut codes: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); schema.categorical.len()];
    for (_, cats, _) in &raw_rows {
        for (m, v) in codes.iter_mut().zip(cats) {
            if !v.is_empty() {
                m.insert(v.clone(), 0);
            }
        }
    }
    for m in &mut codes {
        for (i, v) in m.values_mut().enumerate() {
            *v = i;
        }
    }

    let mut rows_dropped = 0;
    let mut kept: Vec<(Vec<f64>, String)> = Vec::with_capacity(raw_rows.len());
    for (numeric, cats, label) in raw_rows {
        if label.is_empty() || numeric.iter().any(Option::is_none) || cats.iter().any(String::is_empty) {
            rows_dropped += 1;
            continue;
        }
        let mut row = Vec::with_capacity(f);
        let (mut ni, mut ci) = (numeric.into_iter(), cats.iter().enumerate());
        for name in &feature_names {
            if schema.categorical.contains(name) {
                let (k, v) = ci.next().expect("one value per categorical column");
                row.push(codes[k][v] as f64);
            } else {
                row.push(ni.next().flatten().expect("validated above"));
            }
        }
        kept.push((row, label));
    }

    let mut class_counts: HashMap<&str, usize> = HashMap::new();
    for (_, label) in &kept {
        *class_counts.entry(label.as_str()).or_default() += 1;
    }
    let removed: BTreeSet<String> = class_counts
        .iter()
        .filter(|(_, &n)| n < schema.min_class_count)
        .map(|(name, _)| name.to_string())
        .collect();
    let before = kept.len();
    kept.retain(|(_, label)| !removed.contains(label));
    let rows_in_removed_classes = before - kept.len();

    if kept.is_empty() {
        return Err(data_err(path, "no valid rows"));
    }
    let class_names: Vec<String> = kept.iter().map(|(_, l)| l.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if class_names.len() < 2 {
        return Err(data_err(path, format!("only one class (`{}`) present", class_names[0])));
    }
    let index: HashMap<&str, usize> = class_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let labels = kept.iter().map(|(_, l)| index[l.as_str()]).collect();
    let features = kept.iter().flat_map(|(r, _)| r.iter().copied()).collect();
    let dataset = Dataset::new(features, f, labels, class_names)?;
    Ok((
        dataset,
        LoadSummary {
            path: path.to_path_buf(),
            rows_read,
            rows_dropped,
            rows_in_removed_classes,
            removed_classes: removed.into_iter().collect(),
            feature_names,
        },
    ))
}
