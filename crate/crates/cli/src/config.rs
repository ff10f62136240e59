use std::path::Path;

use alertness::dataset::{SamplingSpec, SplitSpec};
use alertness::pipeline::MonitorConfig;
use alertness::synth::SynthProfile;
use anyhow::{Context, Result};
use serde::Deserialize;

/// Optional TOML overlay passed with `--config`. Each section mirrors the
/// engine's configuration type; missing keys keep their defaults and
/// unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub monitor: MonitorConfig,
    pub split: SplitSpec,
    pub synth: SynthProfile,
    pub sampling: SamplingSpec,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: CliConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.monitor.validate()?;
        config.split.validate()?;
        config.synth.validate()?;
        Ok(config)
    }
}
