//! Experiment configuration files (TOML).
//!
//! ```toml
//! [model]
//! probabilities = [0.2, 0.2, 0.2, 0.2, 0.2]   # idle type first
//! benefits = [3.0, 4.0, 5.0, 6.0]             # omit when [mos] is given
//! cost = 1.0
//! discount = 0.99
//! token_cap = 20
//! p_recv = 0.5
//! q_accept = 0.5
//! ```
//!
//! The same structure serializes to JSON; `docs/config.schema.json`
//! describes it for tools that generate instances.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learning::LearningConfig;
use crate::model::{EnvFactors, MdpModel, ModelError, TrafficModel};
use crate::mos::{benefit_from_mos, mos, LinkQuality, LogBase, MosError, MosParams, MosTrafficKind};
use crate::solver::SolverConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("config error: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mos(#[from] MosError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Stationary probabilities, idle type first.
    pub probabilities: Vec<f64>,
    /// Benefits of the non-idle types, ascending.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benefits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    pub cost: f64,
    pub discount: f64,
    pub token_cap: usize,
    pub p_recv: f64,
    pub q_accept: f64,
}

/// Benefits derived from MOS models, one traffic kind per non-idle type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosConfig {
    #[serde(flatten)]
    pub params: MosParams,
    pub d2d: LinkQuality,
    pub cellular: LinkQuality,
    pub kinds: Vec<MosTrafficKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_slots")]
    pub slots: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: u64,
    #[serde(default)]
    pub initial_tokens: Option<usize>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            slots: default_slots(),
            seed: 0,
            replications: default_replications(),
            initial_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub param: Option<String>,
    #[serde(default)]
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    #[serde(default = "default_compare_betas")]
    pub betas: Vec<f64>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            betas: default_compare_betas(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkPolicyChoice {
    Optimal,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default = "default_num_ues")]
    pub num_ues: usize,
    #[serde(default = "default_network_policy")]
    pub policy: NetworkPolicyChoice,
    #[serde(default)]
    pub fixed_point_rounds: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            num_ues: default_num_ues(),
            policy: default_network_policy(),
            fixed_point_rounds: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mos: Option<MosConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub learning: LearningConfig,
    #[serde(default)]
    pub network: NetworkSection,
}

fn default_slots() -> u64 {
    1_000_000
}

fn default_replications() -> u64 {
    1
}

fn default_compare_betas() -> Vec<f64> {
    vec![0.3, 0.5, 0.7, 0.9, 0.99]
}

fn default_num_ues() -> usize {
    20
}

fn default_network_policy() -> NetworkPolicyChoice {
    NetworkPolicyChoice::Optimal
}

/// One row of the derived-benefit report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedBenefit {
    pub traffic: usize,
    pub kind: MosTrafficKind,
    pub mos_d2d: f64,
    pub mos_cellular: f64,
    pub benefit: f64,
    pub log_base: LogBase,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Builds and validates the model, deriving benefits from MOS when the
    /// config has a `[mos]` section.
    pub fn resolve_model(&self) -> Result<(MdpModel, Vec<DerivedBenefit>), ConfigError> {
        let m = &self.model;
        let (benefits, derived) = match (&m.benefits, &self.mos) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(
                    "give either model.benefits or a [mos] section, not both".into(),
                ))
            }
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "model.benefits is required when there is no [mos] section".into(),
                ))
            }
            (Some(b), None) => (b.clone(), Vec::new()),
            (None, Some(cfg)) => {
                let derived = derive_benefits(cfg)?;
                (derived.iter().map(|d| d.benefit).collect(), derived)
            }
        };
        let mut traffic = TrafficModel::new(m.probabilities.clone(), benefits);
        if let Some(labels) = &m.labels {
            if labels.len() != traffic.types.len() {
                return Err(ConfigError::Invalid(format!(
                    "{} labels given for {} traffic types",
                    labels.len(),
                    traffic.types.len()
                )));
            }
            for (t, l) in traffic.types.iter_mut().zip(labels) {
                t.label = l.clone();
            }
        }
        let model = MdpModel::new(
            traffic,
            EnvFactors::new(m.p_recv, m.q_accept),
            m.cost,
            m.discount,
            m.token_cap,
        )
        .validated()?;
        Ok((model, derived))
    }
}

pub fn derive_benefits(cfg: &MosConfig) -> Result<Vec<DerivedBenefit>, ConfigError> {
    cfg.kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            Ok(DerivedBenefit {
                traffic: i + 1,
                kind,
                mos_d2d: mos(&cfg.params, &cfg.d2d, kind)?,
                mos_cellular: mos(&cfg.params, &cfg.cellular, kind)?,
                benefit: benefit_from_mos(&cfg.params, &cfg.d2d, &cfg.cellular, kind)?,
                log_base: cfg.params.log_base,
            })
        })
        .collect()
}
