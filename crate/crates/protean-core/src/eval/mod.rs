//! Classification metrics, the rare-class and zero-shot protocols, and the
//! Mann-Whitney U test.

mod metrics;
mod mwu;
mod protocols;

pub use metrics::{evaluate, Averaging, Classifier, EvalScope, MetricsReport};
pub use mwu::{mann_whitney_u, MannWhitney, PValueMethod, EXACT_LIMIT};
pub use protocols::{rare_class_report, select_rare_classes, summarize, MethodAccuracy, zero_shot_report, RareClassEntry, RareClassReport, Summary, ZeroShotEntry, ZeroShotReport};
