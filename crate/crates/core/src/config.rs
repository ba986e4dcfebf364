//! Run configuration: one TOML file per run, layered over a named preset.
//!
//! ```toml
//! preset = "p2h"
//! output = "runs/p2h-seed1"
//!
//! [data]
//! triples = "data/triples.tsv"
//! schema = "data/schema.toml"
//! rules = "data/rules.toml"
//! splits = "data/splits.json"
//!
//! [train]
//! seed = 3
//! ```
//!
//! Keys left out of `[train]` take the preset's value. The resolved config
//! (preset applied, defaults filled in) is what gets echoed into the run
//! directory, so it can be fed back verbatim with `preset` removed.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::SplitRatios;
use crate::par::Execution;
use crate::policy::PolicyConfig;
use crate::ruleweights::UpdateMode;
use crate::synthgen::SynthConfig;
use crate::walker::TrainConfig;

/// Named starting points for `[train]`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Best grid-search values for two-hop rule-weight updates.
    P2h,
    /// Same settings with exact-match (naive) weight updates.
    Naive,
    /// No rule reward and frozen weights: a plain path-walking agent.
    RuleFree,
    /// Small, fast settings for the synthetic benchmark graphs.
    Synthetic,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::P2h, Preset::Naive, Preset::RuleFree, Preset::Synthetic];

    pub fn name(self) -> &'static str {
        match self {
            Preset::P2h => "p2h",
            Preset::Naive => "naive",
            Preset::RuleFree => "rule-free",
            Preset::Synthetic => "synthetic",
        }
    }

    pub fn train_config(self) -> TrainConfig {
        let base = TrainConfig::default();
        match self {
            Preset::P2h => TrainConfig {
                rule_reward_ratio: 10.0,
                alpha: 0.001,
                learning_rate: 1e-4,
                batch_size: 128,
                rollouts: 100,
                baseline_decay: 0.05,
                beta: 0.025,
                update_mode: UpdateMode::P2h,
                policy: PolicyConfig {
                    hidden_size: 256,
                    ..PolicyConfig::default()
                },
                ..base
            },
            Preset::Naive => TrainConfig {
                update_mode: UpdateMode::Naive,
                ..Preset::P2h.train_config()
            },
            Preset::RuleFree => TrainConfig {
                rule_reward_ratio: 0.0,
                update_mode: UpdateMode::None,
                ..Preset::P2h.train_config()
            },
            Preset::Synthetic => TrainConfig {
                path_length: 3,
                alpha: 0.003,
                learning_rate: 0.003,
                batch_size: 4,
                rollouts: 60,
                max_epochs: 30,
                patience: 30,
                policy: PolicyConfig {
                    embedding_size: 32,
                    hidden_size: 32,
                    lstm_layers: 1,
                    max_branching: 150,
                },
                ..Preset::P2h.train_config()
            },
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::config("preset", format!("unknown preset `{s}`, expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Forward triples, one `head<TAB>relation<TAB>tail` per line.
    pub triples: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    /// Label-keyed split file; when absent the query relation is split with `split`.
    pub splits: Option<PathBuf>,
    /// Relation to predict, used when no split file is given.
    pub query_relation: Option<String>,
    pub split: SplitRatios,
    /// Add `_`-prefixed inverse edges after loading.
    pub add_inverses: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// `valid` or `test`.
    pub split: String,
    /// Keep only held-out triples whose endpoints are joined by a path of at
    /// most this many edges once the triple itself is removed.
    pub reachable_within: Option<usize>,
    /// Checkpoint to evaluate; defaults to `<output>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: "test".into(),
            reachable_within: None,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DwpcConfig {
    pub damping: f64,
}

impl Default for DwpcConfig {
    fn default() -> Self {
        DwpcConfig { damping: 0.4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PermuteConfig {
    /// Relations to rewire; empty means every forward relation.
    pub relations: Vec<String>,
    pub attempts_factor: f64,
    pub seed: u64,
}

impl Default for PermuteConfig {
    fn default() -> Self {
        PermuteConfig {
            relations: Vec::new(),
            attempts_factor: 10.0,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrimConfig {
    pub relation: Option<String>,
    pub threshold: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnumerateConfig {
    pub max_len: usize,
}

impl Default for EnumerateConfig {
    fn default() -> Self {
        EnumerateConfig { max_len: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Preset the `[train]` table was layered over; informational once resolved.
    pub preset: Option<Preset>,
    pub output: PathBuf,
    pub execution: Execution,
    pub data: DataPaths,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub dwpc: DwpcConfig,
    pub permute: PermuteConfig,
    pub trim: TrimConfig,
    pub enumerate: EnumerateConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: None,
            output: PathBuf::from("run"),
            execution: Execution::Parallel,
            data: DataPaths::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            dwpc: DwpcConfig::default(),
            permute: PermuteConfig::default(),
            trim: TrimConfig::default(),
            enumerate: EnumerateConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Overlay `top` onto `base`, recursing into tables.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Parse a config, applying `preset` (from the file or the argument, the
    /// argument wins) underneath the file's `[train]` table.
    pub fn from_toml_str(text: &str, preset: Option<Preset>) -> Result<Self> {
        let mut user: toml::Value = text.parse::<toml::Table>().map(toml::Value::Table)?;
        let file_preset = match user.get("preset") {
            Some(toml::Value::String(s)) => Some(s.parse::<Preset>()?),
            Some(_) => return Err(Error::config("preset", "must be a string")),
            None => None,
        };
        let preset = preset.or(file_preset);
        if let (Some(p), toml::Value::Table(t)) = (preset, &mut user) {
            t.insert("preset".into(), toml::Value::String(p.name().into()));
        }
        let mut resolved = match preset {
            Some(p) => {
                let mut base = toml::Table::new();
                base.insert("train".into(), toml::Value::try_from(p.train_config())?);
                toml::Value::Table(base)
            }
            None => toml::Value::Table(toml::Table::new()),
        };
        merge(&mut resolved, user);
        let config: RunConfig = resolved.try_into()?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>, preset: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_toml_str(&text, preset)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synth.validate()?;
        self.data.split.validate()?;
        if !matches!(self.eval.split.as_str(), "valid" | "test") {
            return Err(Error::config("eval.split", format!("`{}` is not one of valid, test", self.eval.split)));
        }
        if self.eval.reachable_within == Some(0) {
            return Err(Error::config("eval.reachable_within", "must be positive"));
        }
        if !(self.dwpc.damping >= 0.0 && self.dwpc.damping.is_finite()) {
            return Err(Error::config("dwpc.damping", "must be a finite value >= 0"));
        }
        if !(self.permute.attempts_factor > 0.0 && self.permute.attempts_factor.is_finite()) {
            return Err(Error::config("permute.attempts_factor", "must be positive"));
        }
        if self.enumerate.max_len == 0 {
            return Err(Error::config("enumerate.max_len", "must be positive"));
        }
        Ok(())
    }

    /// A data path that must be set and exist; the error names the key.
    pub fn require(&self, key: &str) -> Result<&Path> {
        let path = match key {
            "triples" => &self.data.triples,
            "schema" => &self.data.schema,
            "rules" => &self.data.rules,
            "splits" => &self.data.splits,
            _ => return Err(Error::config(format!("data.{key}"), "not a data path")),
        };
        let path = path
            .as_deref()
            .ok_or_else(|| Error::config(format!("data.{key}"), "missing"))?;
        if !path.exists() {
            return Err(Error::config(format!("data.{key}"), format!("{} does not exist", path.display())));
        }
        Ok(path)
    }
}
