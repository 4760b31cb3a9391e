//! Experiment files (TOML) and `--set` overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Architecture, LayerParams, NetConfig, TrainConfig, UpdateSchedule};
use crate::conv::ConvSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Shd,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: Architecture,
    pub input_shape: Vec<usize>,
    #[serde(default = "one")]
    pub input_max: u32,
    #[serde(default)]
    pub hidden: usize,
    pub classes: usize,
    pub shadow_bits: u32,
    pub infer_bits: u32,
    #[serde(default = "voltage_default")]
    pub voltage_bits: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<ConvSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "alpha_default")]
    pub alpha: i32,
    #[serde(default = "timesteps_default")]
    pub timesteps: usize,
    #[serde(default = "batch_default")]
    pub batch_size: usize,
    #[serde(default = "epochs_default")]
    pub epochs: usize,
    #[serde(default = "clip_default")]
    pub clip: i32,
    #[serde(default)]
    pub schedule: UpdateSchedule,
    /// Use only the first N training samples (0 = all).
    #[serde(default)]
    pub train_limit: usize,
    /// Use only the first N test samples (0 = all).
    #[serde(default)]
    pub test_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub train: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            train: 2000,
            test: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    #[serde(default = "seeds_default")]
    pub seeds: Vec<u64>,
    pub model: ModelSection,
    pub train: TrainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
    pub layers: Vec<LayerParams>,
}

fn one() -> u32 {
    1
}
fn voltage_default() -> u32 {
    32
}
fn alpha_default() -> i32 {
    TrainConfig::default().alpha
}
fn timesteps_default() -> usize {
    TrainConfig::default().timesteps
}
fn batch_default() -> usize {
    TrainConfig::default().batch_size
}
fn epochs_default() -> usize {
    TrainConfig::default().epochs
}
fn clip_default() -> i32 {
    TrainConfig::default().clip
}
fn seeds_default() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn net_config(&self) -> NetConfig {
        let m = &self.model;
        NetConfig {
            architecture: m.architecture,
            input_shape: m.input_shape.clone(),
            input_max: m.input_max,
            hidden: m.hidden,
            conv: m.conv,
            classes: m.classes,
            shadow_bits: m.shadow_bits,
            infer_bits: m.infer_bits,
            voltage_bits: m.voltage_bits,
            layers: self.layers.clone(),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            alpha: t.alpha,
            timesteps: t.timesteps,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed,
            clip: t.clip,
            schedule: t.schedule,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net_config().validate()?;
        self.train_config(0).validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.synthetic.is_some() && self.dataset != DatasetKind::Synthetic {
            return Err(Error::Config("[synthetic] section given for a non-synthetic dataset".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Parse a config, apply `key.path=value` overrides, and validate.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let cfg: ExperimentConfig = toml::Value::Table(value)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, overrides)
}

fn parse_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Set `a.b.0.c = value`; numeric segments index arrays. Missing table
/// keys are created; unknown ones are rejected later by deserialization.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key `{path}` has an empty segment")));
    }
    let value = parse_value(raw.trim());
    let bad = |why: &str| Error::Config(format!("override `{path}`: {why}"));

    let (last, parents) = keys.split_last().expect("non-empty");
    let mut cur: &mut toml::Value = root
        .entry(parents.first().copied().unwrap_or(last).to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if parents.is_empty() {
        *cur = value;
        return Ok(());
    }
    for key in &parents[1..] {
        cur = step(cur, key, &bad)?;
    }
    match cur {
        toml::Value::Table(t) => {
            t.insert(last.to_string(), value);
        }
        toml::Value::Array(a) => {
            let i: usize = last.parse().map_err(|_| bad("array index expected"))?;
            let slot = a.get_mut(i).ok_or_else(|| bad("array index out of range"))?;
            *slot = value;
        }
        _ => return Err(bad("parent is not a table or array")),
    }
    Ok(())
}

fn step<'a>(cur: &'a mut toml::Value, key: &str, bad: &dyn Fn(&str) -> Error) -> Result<&'a mut toml::Value> {
    match cur {
        toml::Value::Table(t) => Ok(t
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))),
        toml::Value::Array(a) => {
            let i: usize = key.parse().map_err(|_| bad("array index expected"))?;
            a.get_mut(i).ok_or_else(|| bad("array index out of range"))
        }
        _ => Err(bad("parent is not a table or array")),
    }
}
