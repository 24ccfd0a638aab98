use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::nlu::DEFAULT_SMOOTHING;
use crate::pipeline::{DEFAULT_PRONOUNS, DEFAULT_THRESHOLD};
use crate::students::DEFAULT_CLUSTERS;

pub const ADMIN_TOKEN_ENV: &str = "PVTA_ADMIN_TOKEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Service settings, usually read from a TOML file. Relative paths are
/// resolved against the directory of that file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub workspace: PathBuf,
    pub kb: PathBuf,
    pub data_dir: PathBuf,
    pub threshold: f64,
    pub host: String,
    pub port: u16,
    pub smoothing: f64,
    pub cluster_k: usize,
    pub admin_token: Option<String>,
    pub pronouns: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            workspace: "workspace.json".into(),
            kb: "kb.json".into(),
            data_dir: "data".into(),
            threshold: DEFAULT_THRESHOLD,
            host: "127.0.0.1".into(),
            port: 8080,
            smoothing: DEFAULT_SMOOTHING,
            cluster_k: DEFAULT_CLUSTERS,
            admin_token: None,
            pronouns: DEFAULT_PRONOUNS.iter().map(|p| p.to_string()).collect(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: ServiceConfig =
            toml::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.display().to_string(),
                source: Box::new(source),
            })?;
        if let Some(base) = path.parent() {
            for p in [&mut config.workspace, &mut config.kb, &mut config.data_dir] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    /// `PVTA_ADMIN_TOKEN` wins over the file value.
    pub fn apply_env(&mut self) {
        if let Ok(token) = std::env::var(ADMIN_TOKEN_ENV) {
            if !token.is_empty() {
                self.admin_token = Some(token);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ConfigError::Invalid(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        if !(self.smoothing.is_finite() && self.smoothing > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "smoothing must be positive, got {}",
                self.smoothing
            )));
        }
        if self.port == 0 {
            return Err(ConfigError::Invalid(
                "port must be between 1 and 65535".into(),
            ));
        }
        if self.cluster_k == 0 {
            return Err(ConfigError::Invalid("cluster_k must be at least 1".into()));
        }
        if self.admin_token.as_deref().is_some_and(str::is_empty) {
            return Err(ConfigError::Invalid("admin_token must not be empty".into()));
        }
        Ok(())
    }
}
