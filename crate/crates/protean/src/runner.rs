//! Experiment orchestration: data wiring, training every strategy on shared
//! partitions, evaluation protocols and the on-disk layout of a run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use protean_core::audit::{audit_participants, dp_sweep, AuditReport, AuditTarget};
use protean_core::data::{dirichlet_partition, split_train_test, synthesize_gaussian, Dataset, Normalizer, PartitionPlan};
use protean_core::eval::{evaluate, rare_class_report, summarize, zero_shot_report, EvalScope, MetricsReport, RareClassReport, Summary, ZeroShotReport};
use protean_core::fed::{participant_classifier, run_federation, Executor, FederationRun, InferenceMode, Strategy, StrategyKind};
use serde::Serialize;

use crate::checkpoint::{prototypes_json, Checkpoint};
use crate::config::{CheckpointPolicy, DataConfig, ExperimentConfig};
use crate::ingest::{load_csv, LoadSummary, Schema};
use crate::manifest::Manifest;
use crate::records::{read_ndjson, to_ndjson, Cell, Record};
use crate::tables::derive_tables;
use crate::writer::RunWriter;
use crate::{Error, Result};

/// Loads or generates the full raw dataset.
pub fn load_dataset(data: &DataConfig) -> Result<(Dataset, Option<LoadSummary>)> {
    match (&data.synthetic, &data.csv) {
        (Some(s), None) => Ok((synthesize_gaussian(s.classes, s.features, s.per_class, s.separation, s.seed)?, None)),
        (None, Some(c)) => {
            let schema = Schema::load(&c.schema)?;
            let (dataset, summary) = load_csv(&c.path, &schema)?;
            Ok((dataset, Some(summary)))
        }
        _ => Err(Error::config("data", "set exactly one of `data.synthetic` and `data.csv`")),
    }
}

/// The data one (α, seed) cell trains and tests on.
#[derive(Debug, Clone)]
pub struct PreparedCell {
    pub cell: Cell,
    pub normalizer: Normalizer,
    /// Raw per-feature training `(min, max)`.
    pub raw_bounds: Vec<(f64, f64)>,
    pub test: Dataset,
    pub plan: PartitionPlan,
    /// Normalized participant shards.
    pub shards: Vec<Dataset>,
}

impl PreparedCell {
    pub fn missing_classes(&self) -> Vec<Vec<usize>> {
        (0..self.plan.num_participants()).map(|i| self.plan.missing_classes(i)).collect()
    }
}

/// Splits, normalizes on the training split and partitions it.
pub fn prepare_cell(dataset: &Dataset, config: &ExperimentConfig, cell: Cell) -> Result<PreparedCell> {
    let (train, test) = split_train_test(dataset, config.data.train_fraction, cell.seed)?;
    let normalizer = Normalizer::fit(&train, config.data.normalization)?;
    let raw_bounds = train.feature_ranges.clone();
    let train = normalizer.apply(&train)?;
    let test = normalizer.apply(&test)?;
    let plan = dirichlet_partition(&train, config.federation.participants, cell.alpha, cell.seed)?;
    let shards = plan.shards.iter().map(|s| train.subset(s)).collect();
    Ok(PreparedCell {
        cell,
        normalizer,
        raw_bounds,
        test,
        plan,
        shards,
    })
}

/// One strategy trained on one cell.
#[derive(Debug, Clone)]
pub struct ArmOutcome {
    pub strategy: Strategy,
    pub inference: InferenceMode,
    pub run: FederationRun,
    /// Test metrics of each participant's deployed classifier.
    pub metrics: Vec<MetricsReport>,
    /// Server state after each round, when requested.
    pub server_checkpoints: Vec<Checkpoint>,
}

impl ArmOutcome {
    pub fn kind(&self) -> StrategyKind {
        self.strategy.kind()
    }

    /// Participant mean of a metric.
    pub fn mean_metric(&self, pick: impl Fn(&MetricsReport) -> f64) -> f64 {
        self.metrics.iter().map(pick).sum::<f64>() / self.metrics.len() as f64
    }
}

pub fn train_arm<E: Executor>(config: &ExperimentConfig, kind: StrategyKind, prepared: &PreparedCell, executor: &E) -> Result<ArmOutcome> {
    let fed = config.federation_config(kind, prepared.cell.seed);
    let every_round = config.federation.checkpoints == CheckpointPolicy::EveryRound;
    let mut server_checkpoints = Vec::new();
    let run = run_federation(&fed, &prepared.shards, executor, |state, _| {
        if every_round {
            server_checkpoints.push(Checkpoint {
                strategy: kind,
                cell: prepared.cell,
                round: state.round,
                global: state.global.clone(),
                global_prototypes: state.global_prototypes.clone(),
                locals: Vec::new(),
                local_prototypes: Vec::new(),
                uploaded_prototypes: Vec::new(),
            });
        }
    })?;
    let inference = config.federation.inference.resolve(&fed.strategy);
    let metrics = (0..prepared.shards.len())
        .map(|i| evaluate(&participant_classifier(&run.state, &fed.strategy, i, inference), &prepared.test, EvalScope::Participant(i)))
        .collect::<protean_core::Result<Vec<_>>>()?;
    Ok(ArmOutcome {
        strategy: fed.strategy,
        inference,
        run,
        metrics,
        server_checkpoints,
    })
}

/// Attacks the prototypes an arm's participants uploaded in its last round.
pub fn audit_arm<E: Executor>(config: &ExperimentConfig, prepared: &PreparedCell, checkpoint: &Checkpoint, executor: &E) -> Result<AuditReport> {
    let target = AuditTarget {
        models: &checkpoint.locals,
        prototypes: &checkpoint.uploaded_prototypes,
        shards: &prepared.shards,
        normalizer: &prepared.normalizer,
        raw_bounds: &prepared.raw_bounds,
    };
    Ok(audit_participants(&target, &config.audit.attack(), config.audit.baseline_trials, prepared.cell.seed, config.federation.dp_sigma, executor)?)
}

/// Everything produced for one (α, seed) cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub prepared: PreparedCell,
    pub arms: Vec<ArmOutcome>,
    pub rare_class: RareClassReport,
    /// Zero-shot report of every federated arm against the local-only arm.
    pub zero_shot: Vec<(StrategyKind, ZeroShotReport)>,
    pub audit: Option<(StrategyKind, AuditReport)>,
    pub seconds: f64,
}

impl CellOutcome {
    pub fn arm(&self, kind: StrategyKind) -> Option<&ArmOutcome> {
        self.arms.iter().find(|a| a.kind() == kind)
    }

    pub fn records(&self) -> Vec<Record> {
        let cell = self.prepared.cell;
        let mut out = Vec::new();
        for arm in &self.arms {
            for report in &arm.run.reports {
                out.push(Record::Round {
                    cell,
                    strategy: arm.kind(),
                    initial_objective: arm.run.initial_objective,
                    report: report.clone(),
                });
            }
        }
        for arm in &self.arms {
            for (participant, report) in arm.metrics.iter().enumerate() {
                out.push(Record::Metrics {
                    cell,
                    strategy: arm.kind(),
                    participant,
                    report: report.clone(),
                });
            }
        }
        for entry in &self.rare_class.entries {
            out.push(Record::RareClass { cell, entry: entry.clone() });
        }
        for (strategy, report) in &self.zero_shot {
            for entry in &report.entries {
                out.push(Record::ZeroShot { cell, strategy: *strategy, entry: *entry });
            }
        }
        if let Some((strategy, audit)) = &self.audit {
            out.extend(audit_records(cell, *strategy, audit));
        }
        out
    }
}

fn audit_records(cell: Cell, strategy: StrategyKind, audit: &AuditReport) -> impl Iterator<Item = Record> + '_ {
    audit.entries.iter().map(move |entry| Record::Audit {
        cell,
        strategy,
        dp_sigma: audit.dp_sigma,
        entry: entry.clone(),
    })
}

/// Trains every configured arm on one cell and runs the protocols.
pub fn run_cell<E: Executor>(config: &ExperimentConfig, dataset: &Dataset, cell: Cell, executor: &E) -> Result<CellOutcome> {
    let start = Instant::now();
    let prepared = prepare_cell(dataset, config, cell)?;
    let arms = executor.map_vec(config.arms(), |_, kind| train_arm(config, kind, &prepared, executor)).into_iter().collect::<Result<Vec<_>>>()?;
    let methods: Vec<(&str, &[MetricsReport])> = arms.iter().map(|a| (a.kind().name(), a.metrics.as_slice())).collect();
    let rare_class = rare_class_report(&prepared.plan.counts, &methods)?;
    let mut zero_shot = Vec::new();
    if let Some(local) = arms.iter().find(|a| a.kind() == StrategyKind::LocalOnly) {
        let missing = prepared.missing_classes();
        for arm in arms.iter().filter(|a| a.kind() != StrategyKind::LocalOnly) {
            zero_shot.push((arm.kind(), zero_shot_report(&missing, &local.metrics, &arm.metrics)?));
        }
    }
    let audit = if config.audit.enabled {
        let arm = arms.iter().find(|a| a.kind() == config.audit.strategy).expect("validated audit strategy");
        let checkpoint = Checkpoint::from_state(arm.kind(), cell, &arm.run.state);
        Some((arm.kind(), audit_arm(config, &prepared, &checkpoint, executor)?))
    } else {
        None
    };
    Ok(CellOutcome {
        prepared,
        arms,
        rare_class,
        zero_shot,
        audit,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Directory of a cell inside `checkpoints/`.
pub fn cell_dir(cell: Cell) -> String {
    format!("alpha-{}/seed-{}", cell.alpha, cell.seed)
}

pub fn final_checkpoint_path(cell: Cell, strategy: StrategyKind) -> String {
    format!("checkpoints/{}/{}/final.ckpt", cell_dir(cell), strategy.name())
}

fn json_bytes(value: &impl Serialize) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("value serializes");
    out.push(b'\n');
    out
}

#[derive(Serialize)]
struct DatasetInfo<'a> {
    samples: usize,
    features: usize,
    classes: &'a [String],
    class_counts: Vec<usize>,
    csv: Option<&'a LoadSummary>,
}

#[derive(Serialize)]
struct CellTiming {
    alpha: f64,
    seed: u64,
    seconds: f64,
}

/// What a finished run left on disk.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub records: Vec<Record>,
    pub manifest: Manifest,
}

fn write_records(writer: &mut RunWriter, records: &[Record]) -> Result<()> {
    let groups: [(&str, fn(&Record) -> bool); 5] = [
        ("records/rounds.ndjson", |r| matches!(r, Record::Round { .. })),
        ("records/metrics.ndjson", |r| matches!(r, Record::Metrics { .. })),
        ("records/rare_class.ndjson", |r| matches!(r, Record::RareClass { .. })),
        ("records/zero_shot.ndjson", |r| matches!(r, Record::ZeroShot { .. })),
        ("records/audit.ndjson", |r| matches!(r, Record::Audit { .. } | Record::DpUtility { .. })),
    ];
    for (path, keep) in groups {
        let selected: Vec<&Record> = records.iter().filter(|r| keep(r)).collect();
        if !selected.is_empty() {
            writer.write(path, to_ndjson(selected).as_bytes())?;
        }
    }
    for (name, text) in derive_tables(records) {
        writer.write(&format!("tables/{name}"), text.as_bytes())?;
    }
    Ok(())
}

fn write_cell(writer: &mut RunWriter, config: &ExperimentConfig, outcome: &CellOutcome, class_names: &[String]) -> Result<()> {
    let cell = outcome.prepared.cell;
    let dir = cell_dir(cell);
    writer.write(&format!("partitions/{dir}.json"), &json_bytes(&outcome.prepared.plan))?;
    if config.federation.checkpoints == CheckpointPolicy::None {
        return Ok(());
    }
    for arm in &outcome.arms {
        let base = format!("checkpoints/{dir}/{}", arm.kind().name());
        for ckpt in &arm.server_checkpoints {
            writer.write(&format!("{base}/round-{:02}.ckpt", ckpt.round), &ckpt.to_bytes())?;
        }
        let state = &arm.run.state;
        writer.write(&final_checkpoint_path(cell, arm.kind()), &Checkpoint::from_state(arm.kind(), cell, state).to_bytes())?;
        let export = serde_json::json!({
            "global": prototypes_json(class_names, &state.global_prototypes),
            "uploaded": state.uploaded_prototypes.iter().map(|p| prototypes_json(class_names, p)).collect::<Vec<_>>(),
        });
        writer.write(&format!("{base}/prototypes.json"), &json_bytes(&export))?;
    }
    Ok(())
}

/// Runs every seed at each of `alphas` and writes the run directory.
fn execute<E: Executor>(config: &ExperimentConfig, alphas: &[f64], executor: &E, progress: &mut dyn FnMut(&CellOutcome)) -> Result<RunSummary> {
    let (dataset, csv) = load_dataset(&config.data)?;
    let mut writer = RunWriter::create(&config.output_dir)?;
    writer.write(ExperimentConfig::RUN_FILE, config.to_toml().as_bytes())?;
    let info = DatasetInfo {
        samples: dataset.len(),
        features: dataset.num_features,
        classes: &dataset.class_names,
        class_counts: dataset.class_counts(),
        csv: csv.as_ref(),
    };
    writer.write("dataset.json", &json_bytes(&info))?;
    let mut records = Vec::new();
    let mut timing = Vec::new();
    for &alpha in alphas {
        for &seed in &config.seeds {
            let cell = Cell { alpha, seed };
            let outcome = run_cell(config, &dataset, cell, executor)?;
            write_cell(&mut writer, config, &outcome, &dataset.class_names)?;
            records.extend(outcome.records());
            timing.push(CellTiming { alpha, seed, seconds: outcome.seconds });
            progress(&outcome);
        }
    }
    write_records(&mut writer, &records)?;
    writer.write("timing.json", &json_bytes(&timing))?;
    let output_dir = writer.target().to_path_buf();
    let manifest = writer.finish(&config.hash())?;
    Ok(RunSummary { output_dir, records, manifest })
}

/// Runs the first configured α for every seed.
pub fn run_experiment<E: Executor>(config: &ExperimentConfig, executor: &E, progress: &mut dyn FnMut(&CellOutcome)) -> Result<RunSummary> {
    execute(config, &config.federation.alpha[..1], executor, progress)
}

/// Runs the full α × seed grid.
pub fn sweep<E: Executor>(config: &ExperimentConfig, executor: &E, progress: &mut dyn FnMut(&CellOutcome)) -> Result<RunSummary> {
    execute(config, &config.federation.alpha, executor, progress)
}

/// Loads every NDJSON record file of a run directory.
pub fn load_records(run_dir: &Path) -> Result<Vec<Record>> {
    let dir = run_dir.join("records");
    let mut records = Vec::new();
    for name in ["rounds", "metrics", "rare_class", "zero_shot", "audit"] {
        let path = dir.join(format!("{name}.ndjson"));
        if path.exists() {
            records.extend(read_ndjson(&path)?);
        }
    }
    if records.is_empty() {
        return Err(Error::format(&dir, "no records found"));
    }
    Ok(records)
}

/// Re-derives the summary tables of a finished run.
pub fn report(run_dir: &Path) -> Result<Vec<(&'static str, String)>> {
    Ok(derive_tables(&load_records(run_dir)?))
}

/// Options of a post-hoc audit.
#[derive(Debug, Clone, Default)]
pub struct AuditOptions {
    /// Strategy to attack; defaults to the config's audit strategy.
    pub strategy: Option<StrategyKind>,
    /// Retrain at each configured σ and attack each run.
    pub dp_sweep: bool,
    /// Defaults to `<run_dir>/audit`.
    pub output_dir: Option<PathBuf>,
}

/// Attacks the final checkpoints of a run, re-deriving the shards from its
/// stored config.
pub fn audit_run<E: Executor>(run_dir: &Path, options: &AuditOptions, executor: &E) -> Result<RunSummary> {
    let mut config = ExperimentConfig::from_run_dir(run_dir)?;
    if let Some(s) = options.strategy {
        config.audit.strategy = s;
    }
    config.validate_audit_strategy()?;
    let strategy = config.audit.strategy;
    let (dataset, _) = load_dataset(&config.data)?;
    let cells: Vec<Cell> = load_records(run_dir)?
        .iter()
        .filter_map(|r| match r {
            Record::Metrics { cell, strategy: s, participant: 0, .. } if *s == strategy => Some(*cell),
            _ => None,
        })
        .collect();
    if cells.is_empty() {
        return Err(Error::Mismatch(format!("run has no `{}` results to audit", strategy.name())));
    }
    let target = options.output_dir.clone().unwrap_or_else(|| run_dir.join("audit"));
    let mut writer = RunWriter::create(&target)?;
    let mut records = Vec::new();
    for cell in cells {
        let prepared = prepare_cell(&dataset, &config, cell)?;
        let checkpoint = Checkpoint::read(&run_dir.join(final_checkpoint_path(cell, strategy)))?;
        if checkpoint.strategy != strategy || checkpoint.cell != cell || checkpoint.locals.len() != prepared.shards.len() {
            return Err(Error::Mismatch(format!("checkpoint for alpha {} seed {} does not match the run config", cell.alpha, cell.seed)));
        }
        let audit = audit_arm(&config, &prepared, &checkpoint, executor)?;
        records.extend(audit_records(cell, strategy, &audit));
        if options.dp_sweep {
            let fed = config.federation_config(strategy, cell.seed);
            let sweep = dp_sweep(&fed, &prepared.shards, &prepared.test, &prepared.normalizer, &prepared.raw_bounds, &config.audit.sigmas, &config.audit.attack(), config.audit.baseline_trials, executor)?;
            for point in &sweep.points {
                records.extend(audit_records(cell, strategy, &point.audit));
                records.push(Record::DpUtility {
                    cell,
                    strategy,
                    dp_sigma: point.sigma,
                    macro_f1: point.macro_f1,
                    macro_accuracy: point.macro_accuracy,
                });
            }
        }
    }
    write_records(&mut writer, &records)?;
    let output_dir = writer.target().to_path_buf();
    let manifest = writer.finish(&config.hash())?;
    Ok(RunSummary { output_dir, records, manifest })
}

/// One row of a strategy comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    /// `<strategy>@<config index>`.
    pub label: String,
    pub alpha: f64,
    /// Participant-mean macro accuracy per seed.
    pub per_seed: Vec<f64>,
    pub macro_accuracy: Summary,
    pub macro_f1: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// The partition every strategy of a cell trained on.
    pub partitions: Vec<PartitionPlan>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "alpha", "macro_accuracy_mean", "macro_accuracy_sd", "macro_f1_mean", "macro_f1_sd", "seeds"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.label.clone(),
                r.alpha.to_string(),
                r.macro_accuracy.mean.to_string(),
                r.macro_accuracy.sd.to_string(),
                r.macro_f1.mean.to_string(),
                r.macro_f1.sd.to_string(),
                r.per_seed.len().to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }
}

/// Trains the strategies of several configs on shared partitions.
///
/// The configs must agree on data, seeds, participants and α; everything
/// else (strategies, weights, optimizer settings) may differ.
pub fn compare_strategies<E: Executor>(configs: &[ExperimentConfig], executor: &E) -> Result<Comparison> {
    let first = configs.first().ok_or_else(|| Error::Mismatch("no configs to compare".into()))?;
    for (k, c) in configs.iter().enumerate().skip(1) {
        let differs = [
            ("data", c.data != first.data),
            ("seeds", c.seeds != first.seeds),
            ("federation.participants", c.federation.participants != first.federation.participants),
            ("federation.alpha", c.federation.alpha != first.federation.alpha),
        ];
        if let Some((field, _)) = differs.iter().find(|d| d.1) {
            return Err(Error::Mismatch(format!("config {k} differs from config 0 in `{field}`")));
        }
    }
    let (dataset, _) = load_dataset(&first.data)?;
    let mut rows: Vec<ComparisonRow> = Vec::new();
    let mut partitions = Vec::new();
    for &alpha in &first.federation.alpha {
        let mut per_label: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
        for &seed in &first.seeds {
            let prepared = prepare_cell(&dataset, first, Cell { alpha, seed })?;
            for (k, config) in configs.iter().enumerate() {
                for &kind in &config.federation.strategies {
                    let arm = train_arm(config, kind, &prepared, executor)?;
                    let label = format!("{}@{k}", kind.name());
                    let acc = arm.mean_metric(|m| m.macro_accuracy);
                    let f1 = arm.mean_metric(|m| m.macro_f1);
                    match per_label.iter_mut().find(|(l, _, _)| *l == label) {
                        Some((_, a, f)) => {
                            a.push(acc);
                            f.push(f1);
                        }
                        None => per_label.push((label, vec![acc], vec![f1])),
                    }
                }
            }
            partitions.push(prepared.plan);
        }
        for (label, acc, f1) in per_label {
            rows.push(ComparisonRow {
                label,
                alpha,
                macro_accuracy: summarize(&acc).expect("at least one seed"),
                macro_f1: summarize(&f1).expect("at least one seed"),
                per_seed: acc,
            });
        }
    }
    Ok(Comparison { rows, partitions })
}
