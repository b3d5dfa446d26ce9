use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use woundflow_gbm::GbmConfig;

use crate::augment::AugmentPolicy;
use crate::error::{Error, IoContext, Result};
use crate::scalar::Precision;
use crate::vision::{BackboneConfig, Task, TrainConfig};

use super::fusion::FusionMode;
use super::split::SplitSpec;

/// Prefix of environment variables that override config keys.
pub const ENV_PREFIX: &str = "WOUNDFLOW_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub manifest: PathBuf,
    /// Directory that manifest image paths are relative to; empty means the
    /// manifest's own directory.
    pub image_root: PathBuf,
    /// Number of test images that get a heatmap overlay.
    pub heatmap_samples: usize,
    pub heatmap_task: Task,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            image_root: PathBuf::new(),
            heatmap_samples: 8,
            heatmap_task: Task::UlcerType,
        }
    }
}

impl DataConfig {
    pub fn resolved_image_root(&self) -> PathBuf {
        if self.image_root.as_os_str().is_empty() {
            self.manifest.parent().map(Path::to_path_buf).unwrap_or_default()
        } else {
            self.image_root.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Feed recorded wound-variable labels to stage 2 instead of predictions.
    pub use_true_labels: bool,
}

/// Everything a run needs. Every random stream is derived from `seed`
/// together with the section-level seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub data: DataConfig,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    pub gbm: GbmConfig,
    pub split: SplitSpec,
    pub augment: AugmentPolicy,
    pub fusion: FusionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F32,
            data: DataConfig::default(),
            backbone: BackboneConfig::desk(),
            train: TrainConfig::default(),
            gbm: GbmConfig::default(),
            split: SplitSpec::default(),
            augment: AugmentPolicy::default(),
            fusion: FusionConfig::default(),
        }
    }
}

/// Optional keys that the default config does not serialize.
const OPTIONAL_KEYS: [&str; 2] = ["train.patience", "gbm.early_stop_rounds"];

fn unknown_keys(user: &toml::Value, known: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match (user, known) {
        (toml::Value::Table(u), toml::Value::Table(k)) => {
            for (key, value) in u {
                let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
                match k.get(key) {
                    Some(template) => unknown_keys(value, template, &path, out),
                    None if OPTIONAL_KEYS.contains(&path.as_str()) => {}
                    None => out.push(path),
                }
            }
        }
        (toml::Value::Array(items), toml::Value::Array(templates)) => {
            if let Some(template) = templates.first() {
                for (i, item) in items.iter().enumerate() {
                    unknown_keys(item, template, &format!("{prefix}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}

fn set_path(root: &mut toml::Value, path: &[&str], value: toml::Value) -> std::result::Result<(), String> {
    let (last, parents) = path.split_last().ok_or("empty key")?;
    let mut node = root;
    for p in parents {
        let table = node.as_table_mut().ok_or_else(|| format!("`{p}` is not a table"))?;
        node = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| format!("parent of `{last}` is not a table"))?
        .insert(last.to_string(), value);
    Ok(())
}

/// Parses a raw override as a TOML value, falling back to a string.
fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Config overrides from environment variables: `WOUNDFLOW_TRAIN__EPOCHS=5`
/// sets `train.epochs`. Only names with a `__` section separator are taken.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            rest.contains("__")
                .then(|| (rest.to_ascii_lowercase().split("__").collect::<Vec<_>>().join("."), v))
        })
        .collect();
    out.sort();
    out
}

impl RunConfig {
    /// Parses TOML text, applies `key.path = value` overrides, and reports
    /// every unknown key and invalid value in one error.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut value: toml::Value = text
            .parse::<toml::Table>()
            .map(toml::Value::Table)
            .map_err(|e| Error::Config(vec![e.to_string()]))?;
        let mut errors = Vec::new();
        for (key, raw) in overrides {
            let path: Vec<&str> = key.split('.').collect();
            if let Err(e) = set_path(&mut value, &path, parse_literal(raw)) {
                errors.push(format!("override {key}: {e}"));
            }
        }
        let known = toml::Value::try_from(RunConfig::default()).map_err(|e| Error::Invalid(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&value, &known, "", &mut unknown);
        errors.extend(unknown.into_iter().map(|k| format!("unknown key `{k}`")));
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let config: RunConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut config = Self::parse(&text, overrides)?;
        if config.data.manifest.is_relative() && !config.data.manifest.as_os_str().is_empty() {
            if let Some(dir) = path.parent() {
                config.data.manifest = dir.join(&config.data.manifest);
            }
        }
        if config.data.image_root.is_relative() && !config.data.image_root.as_os_str().is_empty() {
            if let Some(dir) = path.parent() {
                config.data.image_root = dir.join(&config.data.image_root);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut take = |r: std::result::Result<(), Vec<String>>| errors.extend(r.err().unwrap_or_default());
        take(self.backbone.validate());
        take(self.train.validate());
        take(self.gbm.validate());
        take(self.split.validate());
        take(self.augment.validate());
        if self.augment.target_size != self.backbone.input_size {
            errors.push(format!(
                "augment.target_size {:?} must equal backbone.input_size {:?}",
                self.augment.target_size, self.backbone.input_size
            ));
        }
        if self.split.stratify_on != "outcome" && Task::from_name(&self.split.stratify_on).is_err() {
            errors.push(format!("split.stratify_on: unknown label `{}`", self.split.stratify_on));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    /// The effective config as TOML; parsing it back gives the same config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invalid(e.to_string()))
    }
}
