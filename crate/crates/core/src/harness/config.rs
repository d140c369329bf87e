use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, QaMemory};
use crate::env::WorldConfig;
use crate::memory::{DuplicatePolicy, EvictionPolicy};
use crate::neural::EncoderConfig;
use crate::policies::{QaPolicy, TransferBaseline};
use crate::rl::{TrainerConfig, TransferMode};
use crate::{Error, Result};

/// One experiment: a world, the agent's policies, and for learned transfer
/// the trainer and encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Variant name used in comparison tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub world: WorldConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<TrainerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
    #[serde(default)]
    pub policies: PolicyConfig,
    /// Run seeds. Falls back to `trainer.seeds`, then to the trainer default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub qa: QaPolicy,
    #[serde(default)]
    pub eviction: EvictionPolicy,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    #[serde(default)]
    pub duplicates: DuplicatePolicy,
    #[serde(default)]
    pub qa_memory: QaMemory,
    #[serde(default)]
    pub transfer: TransferSpec,
}

fn default_capacity() -> usize {
    AgentConfig::default().capacity
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let a = AgentConfig::default();
        Self {
            qa: a.qa,
            eviction: a.eviction,
            capacity: a.capacity,
            duplicates: a.duplicates,
            qa_memory: a.qa_memory,
            transfer: TransferSpec::default(),
        }
    }
}

impl PolicyConfig {
    pub fn agent(&self) -> AgentConfig {
        AgentConfig {
            qa: self.qa,
            eviction: self.eviction,
            capacity: self.capacity,
            duplicates: self.duplicates,
            qa_memory: self.qa_memory,
        }
    }
}

/// Who decides the short-term to long-term transfer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum TransferSpec {
    Always,
    #[serde(alias = "novel")]
    NovelOnly,
    Random { p: f64 },
    /// A trained Q-network; `mode` overrides `trainer.mode`.
    Learned {
        #[serde(default)]
        mode: TransferMode,
    },
}

impl Default for TransferSpec {
    fn default() -> Self {
        TransferSpec::Learned {
            mode: TransferMode::default(),
        }
    }
}

impl TransferSpec {
    pub fn baseline(self) -> Option<TransferBaseline> {
        match self {
            TransferSpec::Always => Some(TransferBaseline::Always),
            TransferSpec::NovelOnly => Some(TransferBaseline::NovelOnly),
            TransferSpec::Random { p } => Some(TransferBaseline::Random { p }),
            TransferSpec::Learned { .. } => None,
        }
    }

    pub fn label(self) -> String {
        match self {
            TransferSpec::Learned { mode } => format!("learned({mode})"),
            other => other.baseline().expect("not learned").name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_window")]
    pub moving_average_window: usize,
}

fn default_eval_episodes() -> usize {
    100
}

fn default_window() -> usize {
    10
}

impl ExperimentConfig {
    /// Parses and validates a config document. Errors name the offending
    /// key as a dotted path, e.g. `world.grid_length`.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.inner().to_string();
            Error::config(offending_key(&path, &message), message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&super::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if let Some(t) = &self.trainer {
            t.validate()?;
        }
        if let Some(e) = &self.encoder {
            e.validate()?;
        }
        let p = &self.policies;
        if p.capacity == 0 {
            return Err(Error::config("policies.capacity", "must be positive"));
        }
        match p.transfer {
            TransferSpec::Random { p } if !(0.0..=1.0).contains(&p) => {
                return Err(Error::config("policies.transfer.p", "must lie in [0, 1]"));
            }
            TransferSpec::Learned { .. } => {
                if self.trainer.is_none() {
                    return Err(Error::config("trainer", "learned transfer needs a trainer section"));
                }
                if self.encoder.is_none() {
                    return Err(Error::config("encoder", "learned transfer needs an encoder section"));
                }
            }
            _ => {}
        }
        if let (Some(s), Some(t)) = (&self.seeds, &self.trainer) {
            if *s != t.seeds {
                return Err(Error::config("seeds", "disagrees with trainer.seeds"));
            }
        }
        if self.seeds.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::config("seeds", "needs at least one seed"));
        }
        if self.output.eval_episodes == 0 {
            return Err(Error::config("output.eval_episodes", "must be positive"));
        }
        if self.output.moving_average_window == 0 {
            return Err(Error::config("output.moving_average_window", "must be positive"));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        match (&self.seeds, &self.trainer) {
            (Some(s), _) => s.clone(),
            (None, Some(t)) => t.seeds.clone(),
            (None, None) => TrainerConfig::default().seeds,
        }
    }

    /// The trainer section with the transfer mode applied.
    pub fn effective_trainer(&self) -> Option<TrainerConfig> {
        let mut t = self.trainer.clone()?;
        if let TransferSpec::Learned { mode } = self.policies.transfer {
            t.mode = mode;
        }
        t.seeds = self.seeds();
        Some(t)
    }

    pub fn variant_name(&self) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None => match (self.policies.transfer, &self.encoder) {
                (t @ TransferSpec::Learned { .. }, Some(e)) => format!("{} + {}", e.kind, t.label()),
                (t, _) => t.label(),
            },
        }
    }

    /// Creates the output directory if needed and checks that files can be
    /// written into it.
    pub fn ensure_output_dir(&self) -> Result<&Path> {
        let dir = self.output.dir.as_path();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let probe = dir.join(".write-probe");
        fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
        fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))?;
        Ok(dir)
    }
}

/// Dotted key for a deserialization error at `path`. Missing fields are
/// reported at their parent, so the field name is appended.
fn offending_key(path: &str, message: &str) -> String {
    let missing = message
        .strip_prefix("missing field `")
        .and_then(|rest| rest.split('`').next());
    match (path, missing) {
        (".", Some(field)) => field.to_owned(),
        (p, Some(field)) => format!("{p}.{field}"),
        (p, None) => p.to_owned(),
    }
}
