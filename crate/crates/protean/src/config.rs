//! Experiment configuration: a TOML file, validated with field-path
//! diagnostics.

use std::path::{Path, PathBuf};

use protean_core::audit::AttackConfig;
use protean_core::data::Normalization;
use protean_core::fed::{FederationConfig, InferenceMode, LocalConfig, Strategy, StrategyKind};
use protean_core::nn::Architecture;
use protean_core::prototype::PrototypeAveraging;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Deserializes TOML, reporting the path of the offending field on error.
pub(crate) fn parse_toml<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let message = e.into_inner().message().trim().to_string();
        if field == "." {
            Error::format(path, message)
        } else {
            Error::config(field, message)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub features: usize,
    pub per_class: usize,
    pub separation: f64,
    /// Seed of the generated dataset; splits and partitions use the run seed.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    /// Schema file; relative paths resolve against the config file.
    pub schema: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub csv: Option<CsvSource>,
    #[serde(default = "defaults::normalization")]
    pub normalization: Normalization,
    #[serde(default = "defaults::train_fraction")]
    pub train_fraction: f64,
}

/// Inference rule used for evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceChoice {
    /// Nearest prototype for prototype-bearing strategies, head otherwise.
    #[default]
    Default,
    NearestPrototype,
    Head,
}

impl InferenceChoice {
    pub fn resolve(&self, strategy: &Strategy) -> InferenceMode {
        match self {
            InferenceChoice::Default => strategy.default_inference(),
            InferenceChoice::NearestPrototype => InferenceMode::NearestPrototype,
            InferenceChoice::Head => InferenceMode::Head,
        }
    }
}

/// Which binary checkpoints a run writes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointPolicy {
    None,
    /// Full participant and server state after the last round.
    #[default]
    Final,
    /// `Final` plus the server state (global model and prototypes) after
    /// every round.
    EveryRound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationSection {
    pub participants: usize,
    pub alpha: Vec<f64>,
    pub rounds: usize,
    pub strategies: Vec<StrategyKind>,
    pub lambda: f64,
    pub mu: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dp_sigma: f64,
    pub prototype_averaging: PrototypeAveraging,
    pub inference: InferenceChoice,
    pub architecture: Architecture,
    /// Also train a local-only arm for the zero-shot report.
    pub zero_shot_baseline: bool,
    pub checkpoints: CheckpointPolicy,
}

impl Default for FederationSection {
    fn default() -> Self {
        FederationSection {
            participants: 10,
            alpha: vec![0.75, 0.5, 0.25],
            rounds: 10,
            strategies: vec![StrategyKind::Protean, StrategyKind::FedAvg, StrategyKind::FedProx, StrategyKind::FedProto],
            lambda: 1.0,
            mu: 0.1,
            learning_rate: 0.01,
            epochs: 3,
            batch_size: 32,
            dp_sigma: 0.0,
            prototype_averaging: PrototypeAveraging::Contributors,
            inference: InferenceChoice::Default,
            architecture: Architecture::default(),
            zero_shot_baseline: true,
            checkpoints: CheckpointPolicy::Final,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    /// Run the attack after training.
    pub enabled: bool,
    /// Strategy whose shared prototypes are attacked.
    pub strategy: StrategyKind,
    pub steps: usize,
    pub step_size: f64,
    pub restarts: usize,
    pub baseline_trials: usize,
    /// Noise levels for `protean audit --dp-sweep`.
    pub sigmas: Vec<f64>,
}

impl Default for AuditSection {
    fn default() -> Self {
        let attack = AttackConfig::default();
        AuditSection {
            enabled: false,
            strategy: StrategyKind::Protean,
            steps: attack.steps,
            step_size: attack.step_size,
            restarts: attack.restarts,
            baseline_trials: 1000,
            sigmas: vec![0.0, 0.1, 0.5, 1.0],
        }
    }
}

impl AuditSection {
    pub fn attack(&self) -> AttackConfig {
        AttackConfig {
            steps: self.steps,
            step_size: self.step_size,
            restarts: self.restarts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub audit: AuditSection,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
}

mod defaults {
    use std::path::PathBuf;

    use protean_core::data::Normalization;

    pub fn normalization() -> Normalization {
        Normalization::ZScore
    }

    pub fn train_fraction() -> f64 {
        0.8
    }

    pub fn seeds() -> Vec<u64> {
        vec![1, 2, 3]
    }

    pub fn output_dir() -> PathBuf {
        PathBuf::from("runs/experiment")
    }
}

fn check(ok: bool, field: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, message))
    }
}

fn nonneg(v: f64) -> bool {
    v >= 0.0 && v.is_finite()
}

impl ExperimentConfig {
    /// Reads, resolves relative paths against the file's directory, and
    /// validates.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig = parse_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(csv) = &mut config.data.csv {
            csv.path = base.join(&csv.path);
            csv.schema = base.join(&csv.schema);
        }
        if config.output_dir.is_relative() {
            config.output_dir = base.join(&config.output_dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        check(d.synthetic.is_some() != d.csv.is_some(), "data", "set exactly one of `data.synthetic` and `data.csv`")?;
        if let Some(s) = &d.synthetic {
            check(s.classes >= 2, "data.synthetic.classes", "need at least 2 classes")?;
            check(s.features >= 4, "data.synthetic.features", "need at least 4 features")?;
            check(s.per_class >= 1, "data.synthetic.per_class", "must be positive")?;
            check(nonneg(s.separation), "data.synthetic.separation", "must be finite and non-negative")?;
        }
        check(d.train_fraction > 0.0 && d.train_fraction < 1.0, "data.train_fraction", "must lie in (0, 1)")?;

        let f = &self.federation;
        check(f.participants >= 2, "federation.participants", "need at least 2 participants")?;
        check(!f.alpha.is_empty(), "federation.alpha", "need at least one value")?;
        for (i, a) in f.alpha.iter().enumerate() {
            check(*a > 0.0 && a.is_finite(), &format!("federation.alpha[{i}]"), "must be positive and finite")?;
        }
        check(f.rounds >= 1, "federation.rounds", "need at least one round")?;
        check(!f.strategies.is_empty(), "federation.strategies", "need at least one strategy")?;
        for (i, s) in f.strategies.iter().enumerate() {
            check(!f.strategies[..i].contains(s), &format!("federation.strategies[{i}]"), "listed twice")?;
        }
        check(nonneg(f.lambda), "federation.lambda", "must be finite and non-negative")?;
        check(nonneg(f.mu), "federation.mu", "must be finite and non-negative")?;
        check(f.learning_rate > 0.0 && f.learning_rate.is_finite(), "federation.learning_rate", "must be positive and finite")?;
        check(f.epochs >= 1, "federation.epochs", "need at least one epoch")?;
        check(f.batch_size >= 1, "federation.batch_size", "must be positive")?;
        check(nonneg(f.dp_sigma), "federation.dp_sigma", "must be finite and non-negative")?;

        let a = &self.audit;
        check(a.steps >= 1, "audit.steps", "must be positive")?;
        check(a.step_size > 0.0 && a.step_size.is_finite(), "audit.step_size", "must be positive and finite")?;
        check(a.restarts >= 1, "audit.restarts", "must be positive")?;
        check(a.baseline_trials >= 1, "audit.baseline_trials", "must be positive")?;
        for (i, s) in a.sigmas.iter().enumerate() {
            check(nonneg(*s), &format!("audit.sigmas[{i}]"), "must be finite and non-negative")?;
        }
        check(!self.seeds.is_empty(), "seeds", "need at least one seed")?;
        for (i, s) in self.seeds.iter().enumerate() {
            check(!self.seeds[..i].contains(s), &format!("seeds[{i}]"), "listed twice")?;
        }
        if a.enabled {
            check(f.strategies.contains(&a.strategy), "audit.strategy", "must be one of `federation.strategies`")?;
            self.validate_audit_strategy()?;
        }
        Ok(())
    }

    /// The audited strategy must upload prototypes.
    pub fn validate_audit_strategy(&self) -> Result<()> {
        check(self.strategy(self.audit.strategy).shares_prototypes(), "audit.strategy", "strategy does not share prototypes")
    }

    /// File name of the resolved config inside a run directory.
    pub const RUN_FILE: &'static str = "config.toml";

    /// Reads the resolved config a run stored; its paths are already
    /// resolved.
    pub fn from_run_dir(dir: &Path) -> Result<ExperimentConfig> {
        let path = dir.join(Self::RUN_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let config: ExperimentConfig = parse_toml(&text, &path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn strategy(&self, kind: StrategyKind) -> Strategy {
        Strategy::new(kind, self.federation.lambda, self.federation.mu).expect("validated weights")
    }

    pub fn federation_config(&self, kind: StrategyKind, seed: u64) -> FederationConfig {
        let f = &self.federation;
        FederationConfig {
            strategy: self.strategy(kind),
            rounds: f.rounds,
            local: LocalConfig {
                epochs: f.epochs,
                batch_size: f.batch_size,
                learning_rate: f.learning_rate,
            },
            dp_sigma: f.dp_sigma,
            averaging: f.prototype_averaging,
            architecture: f.architecture,
            seed,
        }
    }

    /// Strategies to train, with the local-only arm appended when the
    /// zero-shot report needs it.
    pub fn arms(&self) -> Vec<StrategyKind> {
        let mut arms = self.federation.strategies.clone();
        if self.federation.zero_shot_baseline && !arms.contains(&StrategyKind::LocalOnly) {
            arms.push(StrategyKind::LocalOnly);
        }
        arms
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }
}
