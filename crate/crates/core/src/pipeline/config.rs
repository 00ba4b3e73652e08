use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::evolve::{GAConfig, Stage};
use crate::fitness::{CompositeConfig, RuleConfig, DEFAULT_EPSILON};
use crate::listener::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus_dir: PathBuf,
    pub work_dir: PathBuf,
    pub ga1: GAConfig,
    pub ga2: GAConfig,
    pub rules: RuleConfig,
    pub composite: CompositeConfig,
    pub train: TrainConfig,
    pub collection_size: usize,
    pub epsilon: f64,
    /// Overrides the grammar normalizer recorded next to the trained models.
    pub grammar_norm: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus_dir: PathBuf::from("corpus"),
            work_dir: PathBuf::from("work"),
            ga1: GAConfig::default(),
            ga2: GAConfig {
                mode: Stage::Ga2,
                ..GAConfig::default()
            },
            rules: RuleConfig::default(),
            composite: CompositeConfig::default(),
            train: TrainConfig::default(),
            collection_size: 20,
            epsilon: DEFAULT_EPSILON,
            grammar_norm: None,
        }
    }
}

impl PipelineConfig {
    /// Reads an optional TOML file, then applies `key.path=value` overrides in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, PipelineError> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        // A partial [ga2] table is filled from GAConfig::default(), whose mode is ga1.
        if let Some(toml::Value::Table(ga2)) = table.get_mut("ga2") {
            ga2.entry("mode").or_insert_with(|| toml::Value::String("ga2".into()));
        }
        let cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Config(m));
        if self.corpus_dir == self.work_dir {
            return fail("corpus_dir and work_dir must differ".into());
        }
        if self.collection_size < 1 {
            return fail("collection_size must be >= 1".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return fail("epsilon must be positive".into());
        }
        if self.ga1.mode != Stage::Ga1 || self.ga2.mode != Stage::Ga2 {
            return fail("ga1.mode must be \"ga1\" and ga2.mode must be \"ga2\"".into());
        }
        if let Some(g) = self.grammar_norm {
            if !(g.is_finite() && g > 0.0) {
                return fail("grammar_norm must be positive".into());
            }
        }
        for ga in [&self.ga1, &self.ga2] {
            ga.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        self.rules
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.composite
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn apply_override(table: &mut toml::Table, text: &str) -> Result<(), PipelineError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| PipelineError::Config(format!("override {text:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(PipelineError::Config(format!("bad override key {key:?}")));
    }
    // Bare words that are not TOML literals are taken as strings.
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));

    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| PipelineError::Config(format!("{key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
