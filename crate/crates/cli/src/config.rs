//! Run configuration files (TOML) and `key.path=value` overrides.
//!
//! ```toml
//! output_dir = "runs/refcoco"
//! train_manifests = ["data/refcoco.jsonl", "data/refcocog.jsonl"]
//!
//! [model]
//! input_size = 416
//! [model.backbone]
//! kind = "clip"
//! weights = "weights/rn101.safetensors"
//!
//! [train]
//! learning_rate = 1e-4
//! batch_size = 32
//! ```
//!
//! Instead of `train_manifests`, a `[synthetic]` table (`seed`, `count`,
//! `canvas`) trains on generated shape scenes. Relative paths are resolved
//! against the directory holding the config file.

use std::path::{Path, PathBuf};

use affordance_core::encoders::BackboneSpec;
use affordance_core::model::ModelConfig;
use affordance_core::training::TrainConfig;
use affordance_core::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSource {
    pub seed: u64,
    pub count: usize,
    pub canvas: usize,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        SyntheticSource {
            seed: 0,
            count: 16,
            canvas: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub train_manifests: Vec<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSource>,
    /// Continue from this checkpoint instead of a fresh decoder.
    #[serde(default)]
    pub resume: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value` to a TOML table, creating intermediate tables.
/// The value is read as a TOML literal when it parses as one and as a
/// bare string otherwise.
pub fn apply_override(root: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?}: {part} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_table(table: Table) -> Result<Self> {
        Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Reads a config file, applies overrides and resolves relative paths.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg = RunConfig::from_table(table)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        for m in &mut self.train_manifests {
            resolve(base, m);
        }
        if let Some(r) = &mut self.resume {
            resolve(base, r);
        }
        if let BackboneSpec::Clip { weights, manifest, .. } = &mut self.model.backbone {
            resolve(base, weights);
            if let Some(m) = manifest {
                resolve(base, m);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.train_manifests.is_empty(), &self.synthetic) {
            (true, None) => Err(Error::Config("set train_manifests or a [synthetic] table".into())),
            (false, Some(_)) => Err(Error::Config("train_manifests and [synthetic] are mutually exclusive".into())),
            _ => self.train.validate(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
