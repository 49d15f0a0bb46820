//! The run configuration document (TOML). Every section is optional; missing
//! fields take their defaults, unknown fields are rejected.
//!
//! ```toml
//! [env]
//! map = "loop"
//! action = "steering"
//! horizon = 15.0
//! [env.reward]
//! kind = "orientation"
//! [ppo]
//! total_steps = 200000
//! [eval]
//! episodes = 5
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{FollowerConfig, PdConfig};
use crate::env::EnvConfig;
use crate::ppo::PpoConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config [{section}]: {message}")]
    Invalid { section: &'static str, message: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub episodes: usize,
    /// Base seed; episode seeds derive from it.
    pub seed: u64,
    pub num_workers: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            episodes: 5,
            seed: 0,
            num_workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub eval: EvalSettings,
    pub pd: PdConfig,
    pub follower: FollowerConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RunConfig::from_toml(&text)
    }

    /// The fully resolved document, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |section, e: &dyn std::fmt::Display| ConfigError::Invalid {
            section,
            message: e.to_string(),
        };
        self.env.validate().map_err(|e| inv("env", &e))?;
        self.ppo.validate().map_err(|e| inv("ppo", &e))?;
        self.pd.validate().map_err(|e| inv("pd", &e))?;
        self.follower.pd.validate().map_err(|e| inv("follower", &e))?;
        if !(self.follower.ramp > 0.0 && self.follower.stop_gap >= 0.0) {
            return Err(inv("follower", &"ramp must be positive and stop_gap non-negative"));
        }
        if self.eval.episodes == 0 || self.eval.num_workers == 0 {
            return Err(inv("eval", &"episodes and num_workers must be positive"));
        }
        Ok(())
    }
}
