use std::path::Path;

use cbheight_core::verify::HarnessConfig;
use cbheight_core::{BranchingMechanism, SimConfig, SmallJumpMode};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn default_dt() -> f64 {
    2.5e-4
}
fn default_horizon() -> f64 {
    100.0
}
fn default_mode() -> SmallJumpMode {
    SmallJumpMode::DropCompensated
}

/// Simulation block of a run config. A missing `truncation_delta` is
/// chosen so that about one big jump falls in every ten cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub truncation_delta: Option<f64>,
    #[serde(default = "default_mode")]
    pub small_jump_mode: SmallJumpMode,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { dt: default_dt(), horizon: default_horizon(), truncation_delta: None, small_jump_mode: default_mode(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mechanism: BranchingMechanism,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub harness: HarnessConfig,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        if let Some(s) = ov.seed {
            cfg.sim.seed = s;
        }
        if let Some(m) = ov.paths {
            cfg.harness.paths = m;
        }
        if let Some(dt) = ov.dt {
            cfg.sim.dt = dt;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let named = |prefix: &str, e: &dyn std::fmt::Display| ConfigError::Invalid {
            field: prefix.to_string(),
            reason: e.to_string(),
        };
        self.mechanism.validate().map_err(|e| named("mechanism", &e))?;
        self.sim_config().validate().map_err(|e| named("sim", &e))?;
        self.harness.validate().map_err(|e| named("harness", &e))?;
        for (field, m) in [
            ("harness.marks.mechanism", &self.harness.marks.mechanism),
            ("harness.reflected.jump_mechanism", &self.harness.reflected.jump_mechanism),
        ] {
            if let Some(m) = m {
                m.validate().map_err(|e| named(field, &e))?;
            }
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.sim.dt,
            horizon: self.sim.horizon,
            truncation_delta: self
                .sim
                .truncation_delta
                .unwrap_or_else(|| SimConfig::default_truncation(&self.mechanism.jumps, self.sim.dt)),
            small_jump_mode: self.sim.small_jump_mode,
            seed: self.sim.seed,
        }
    }
}
