use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    /// Plain parameter averaging (the Cerberus baseline).
    #[serde(rename = "fedavg", alias = "cerberus")]
    FedAvg,
    /// Parameter averaging with a proximal term.
    #[serde(rename = "fedprox")]
    FedProx,
    /// Prototype exchange only; models stay local.
    #[serde(rename = "fedproto")]
    FedProto,
    /// Parameters and prototypes are both aggregated.
    Protean,
    /// As `Protean`, but only the embedding section is aggregated.
    ProteanEmbedding,
    /// No federation at all; the without-FL reference.
    LocalOnly,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::FedAvg,
        StrategyKind::FedProx,
        StrategyKind::FedProto,
        StrategyKind::Protean,
        StrategyKind::ProteanEmbedding,
        StrategyKind::LocalOnly,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::FedAvg => "fedavg",
            StrategyKind::FedProx => "fedprox",
            StrategyKind::FedProto => "fedproto",
            StrategyKind::Protean => "protean",
            StrategyKind::ProteanEmbedding => "protean-embedding",
            StrategyKind::LocalOnly => "local-only",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cerberus" => Ok(StrategyKind::FedAvg),
            _ => StrategyKind::ALL
                .into_iter()
                .find(|k| k.name() == s)
                .ok_or_else(|| Error::invalid("strategy", alloc::format!("unknown strategy `{s}`"))),
        }
    }
}

/// Which parameter sections the server averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationScope {
    All,
    EmbeddingOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    NearestPrototype,
    Head,
}

/// A strategy with its loss weights; λ and μ are forced to zero where the
/// strategy has no such term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    kind: StrategyKind,
    lambda: f64,
    mu: f64,
    share_prototypes: bool,
}

impl Strategy {
    pub fn new(kind: StrategyKind, lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be finite and non-negative"));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::invalid("mu", "must be finite and non-negative"));
        }
        let (lambda, mu) = match kind {
            StrategyKind::FedAvg | StrategyKind::LocalOnly => (0.0, 0.0),
            StrategyKind::FedProx => (0.0, mu),
            StrategyKind::FedProto => (lambda, 0.0),
            StrategyKind::Protean | StrategyKind::ProteanEmbedding => (lambda, mu),
        };
        let share_prototypes = matches!(kind, StrategyKind::FedProto | StrategyKind::Protean | StrategyKind::ProteanEmbedding);
        Ok(Strategy {
            kind,
            lambda,
            mu,
            share_prototypes,
        })
    }

    pub fn fedavg() -> Self {
        Self::new(StrategyKind::FedAvg, 0.0, 0.0).expect("valid weights")
    }

    pub fn fedprox(mu: f64) -> Result<Self> {
        Self::new(StrategyKind::FedProx, 0.0, mu)
    }

    pub fn fedproto(lambda: f64) -> Result<Self> {
        Self::new(StrategyKind::FedProto, lambda, 0.0)
    }

    pub fn protean(lambda: f64, mu: f64) -> Result<Self> {
        Self::new(StrategyKind::Protean, lambda, mu)
    }

    pub fn protean_embedding(lambda: f64, mu: f64) -> Result<Self> {
        Self::new(StrategyKind::ProteanEmbedding, lambda, mu)
    }

    pub fn local_only() -> Self {
        Self::new(StrategyKind::LocalOnly, 0.0, 0.0).expect("valid weights")
    }

    /// Turns prototype exchange off; the alignment term then never fires.
    pub fn without_prototypes(mut self) -> Self {
        self.share_prototypes = false;
        self
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn shares_prototypes(&self) -> bool {
        self.share_prototypes
    }

    /// `None` when model parameters never leave the participant.
    pub fn scope(&self) -> Option<AggregationScope> {
        match self.kind {
            StrategyKind::FedAvg | StrategyKind::FedProx | StrategyKind::Protean => Some(AggregationScope::All),
            StrategyKind::ProteanEmbedding => Some(AggregationScope::EmbeddingOnly),
            StrategyKind::FedProto | StrategyKind::LocalOnly => None,
        }
    }

    pub fn default_inference(&self) -> InferenceMode {
        match self.kind {
            StrategyKind::FedAvg | StrategyKind::FedProx => InferenceMode::Head,
            StrategyKind::Protean if !self.share_prototypes => InferenceMode::Head,
            _ => InferenceMode::NearestPrototype,
        }
    }
}
