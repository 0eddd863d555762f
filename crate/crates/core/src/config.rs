//! Controller and estimator configuration file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::mhe::MheConfig;
use crate::nmpc::MpcConfig;

pub const DEFAULT_CONTROLLER_FILE: &str = include_str!("../data/controller_default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub mpc: MpcConfig,
    pub mhe: MheConfig,
}

impl ControllerConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ControllerConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            what: "controller configuration".into(),
            source,
        })?;
        cfg.mpc.validate()?;
        cfg.mhe.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn shipped_default() -> Self {
        Self::from_toml_str(DEFAULT_CONTROLLER_FILE).expect("shipped controller file is valid")
    }
}
