//! Built-in experiment configs.

use super::config::{parse_config, ExperimentConfig};
use crate::error::{Error, Result};

macro_rules! presets {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../presets/", $name, ".toml")))),*]
    };
}

pub const PRESETS: &[(&str, &str)] = presets![
    "synthetic-demo",
    "fc-mnist-4-4",
    "fc-mnist-8-4",
    "fc-mnist-16-4",
    "fc-mnist-8-8",
    "fc-mnist-16-8",
    "fc-mnist-16-16",
    "csnn-mnist-8-4",
    "csnn-mnist-16-4",
    "csnn-mnist-8-8",
    "csnn-mnist-16-8",
    "csnn-mnist-16-16",
    "snn-shd-16-4",
    "snn-shd-16-8",
    "snn-shd-16-12",
    "snn-shd-16-16",
    "rsnn-shd-16-4",
    "rsnn-shd-16-8",
    "rsnn-shd-16-12",
    "rsnn-shd-16-16",
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load_preset(name: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = source(name).ok_or_else(|| {
        let known: Vec<_> = names().collect();
        Error::Config(format!("unknown preset `{name}` (known: {})", known.join(", ")))
    })?;
    parse_config(text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses() {
        for (name, _) in PRESETS {
            load_preset(name, &[]).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(load_preset("nope", &[]).is_err());
    }
}
