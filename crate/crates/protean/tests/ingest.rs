use std::path::PathBuf;

use protean::ingest::{load_csv, Schema};
use protean::Error;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn schema() -> Schema {
    Schema::load(&fixture("flows.schema.toml")).unwrap()
}

#[test]
fn loads_fixture_with_schema_roles() {
    let (data, summary) = load_csv(&fixture("flows.csv"), &schema()).unwrap();
    assert_eq!(summary.rows_read, 123);
    assert_eq!(summary.rows_dropped, 2);
    assert_eq!(summary.rows_in_removed_classes, 1);
    assert_eq!(summary.removed_classes, vec!["rare".to_string()]);
    assert_eq!(summary.feature_names, ["duration", "proto", "src_bytes", "dst_bytes", "flag_count"]);
    assert_eq!(data.class_names, ["dos", "normal", "scan"]);
    assert_eq!(data.len(), 120);
    assert_eq!(data.class_counts(), vec![40, 40, 40]);
    // first data line: 0.779,tcp,144,62,1,sn1,normal; proto codes icmp=0 tcp=1 udp=2
    assert_eq!(data.row(0), &[0.779, 1.0, 144.0, 62.0, 1.0]);
    assert_eq!(data.labels[0], 1);
}

#[test]
fn keeps_small_classes_when_threshold_allows() {
    let mut s = schema();
    s.min_class_count = 1;
    let (data, summary) = load_csv(&fixture("flows.csv"), &s).unwrap();
    assert_eq!(data.class_names, ["dos", "normal", "rare", "scan"]);
    assert_eq!(summary.rows_in_removed_classes, 0);
}

#[test]
fn text_column_must_be_categorical_or_dropped() {
    let mut s = schema();
    s.categorical.clear();
    let err = load_csv(&fixture("flows.csv"), &s).unwrap_err();
    assert!(err.to_string().contains("`proto` is not numeric"), "{err}");
}

#[test]
fn missing_columns_are_reported() {
    let mut s = schema();
    s.label = "class".into();
    assert!(load_csv(&fixture("flows.csv"), &s).unwrap_err().to_string().contains("label column `class`"));
    let mut s = schema();
    s.drop.push("ttl".into());
    assert!(load_csv(&fixture("flows.csv"), &s).unwrap_err().to_string().contains("`ttl`"));
}

#[test]
fn single_class_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    std::fs::write(&path, "a,b,y\n1,2,x\n3,4,x\n").unwrap();
    let s = Schema {
        label: "y".into(),
        drop: vec![],
        categorical: vec![],
        min_class_count: 1,
    };
    let err = load_csv(&path, &s).unwrap_err();
    assert!(matches!(err, Error::Data { .. }), "{err}");
}

#[test]
fn schema_rejects_unknown_keys_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("schema.toml");
    std::fs::write(&path, "label = \"y\"\ndorp = [\"a\"]\n").unwrap();
    let err = Schema::load(&path).unwrap_err();
    assert!(err.to_string().contains("dorp"), "{err}");
}
