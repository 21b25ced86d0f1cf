//! TOML run configuration: `[tree]`, `[limits]`, `[runner]` and one
//! `[providers.<name>]` table per provider.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, ProviderConfig};
use crate::sandbox::process::ProcessRunnerConfig;
use crate::sandbox::ExecLimits;
use crate::tree::ToCConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub tree: ToCConfig,
    pub limits: ExecLimits,
    pub runner: ProcessRunnerConfig,
    pub providers: BTreeMap<String, ProviderConfig>,
}

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config: {0}")]
    Invalid(String),
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigFileError> {
        let mut config: FileConfig = toml::from_str(text).map_err(|e| ConfigFileError::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        for (key, provider) in config.providers.iter_mut() {
            provider.name = key.clone();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(|e| match e {
            ConfigFileError::Parse { message, .. } => ConfigFileError::Parse {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigFileError> {
        let mut problems = Vec::new();
        if let Err(e) = self.tree.validate() {
            problems.extend(e.0);
        }
        if let Err(e) = self.limits.validate() {
            problems.push(e);
        }
        if self.runner.command.is_empty() {
            problems.push("runner.command is empty".into());
        }
        for provider in self.providers.values() {
            if let Err(e) = provider.validate() {
                problems.push(format!("providers.{}: {e}", provider.name));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigFileError::Invalid(problems.join("; ")))
        }
    }

    /// Gateway over the configured HTTP providers. Every model named in
    /// `[tree]` must resolve to one of them.
    pub fn live_gateway(&self) -> Result<Gateway, ConfigFileError> {
        let mut gateway = Gateway::new();
        for provider in self.providers.values() {
            gateway
                .add_provider(provider.clone())
                .map_err(|e| ConfigFileError::Invalid(format!("providers.{}: {e}", provider.name)))?;
        }
        let missing: Vec<&str> = self
            .tree
            .models
            .iter()
            .filter(|m| !gateway.knows_model(m))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(ConfigFileError::Invalid(format!(
                "no provider serves model(s) {}",
                missing.join(", ")
            )));
        }
        Ok(gateway)
    }
}
