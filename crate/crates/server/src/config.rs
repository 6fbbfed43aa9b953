//! Service configuration: an optional TOML or JSON file, then environment
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dt_core::embedding::{DEFAULT_DIMENSION, DEFAULT_MODEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Deterministic,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub data_root: PathBuf,
    pub host: String,
    pub port: u16,
    pub backend: BackendKind,
    pub backend_url: Option<String>,
    pub model: String,
    pub embedding_dim: usize,
    pub rules_path: Option<PathBuf>,
    pub resources_path: Option<PathBuf>,
    /// Train the demo heads on the bundled sample when they are missing.
    pub seed_demo_heads: bool,
    /// Store the bundled sample discussion when the store is empty.
    pub seed_sample: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("dt-data"),
            host: "127.0.0.1".into(),
            port: 8080,
            backend: BackendKind::Deterministic,
            backend_url: None,
            model: DEFAULT_MODEL.into(),
            embedding_dim: DEFAULT_DIMENSION,
            rules_path: None,
            resources_path: None,
            seed_demo_heads: true,
            seed_sample: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid value for {var}: {value:?}")]
    Env { var: &'static str, value: String },
    #[error("{0}")]
    Invalid(String),
}

impl Config {
    /// `.json` files are read as JSON, anything else as TOML.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let parse = |reason: String| ConfigError::Parse {
            path: path.to_path_buf(),
            reason,
        };
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| parse(e.to_string()))
        }
    }

    /// Applies `DT_*` variables from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup("DT_DATA_ROOT") {
            self.data_root = v.into();
        }
        if let Some(v) = lookup("DT_HOST") {
            self.host = v;
        }
        if let Some(v) = lookup("DT_PORT") {
            self.port = v.parse().map_err(|_| ConfigError::Env { var: "DT_PORT", value: v })?;
        }
        if let Some(v) = lookup("DT_BACKEND") {
            self.backend = match v.as_str() {
                "deterministic" => BackendKind::Deterministic,
                "external" => BackendKind::External,
                _ => return Err(ConfigError::Env { var: "DT_BACKEND", value: v }),
            };
        }
        if let Some(v) = lookup("DT_BACKEND_URL") {
            self.backend_url = Some(v);
        }
        if let Some(v) = lookup("DT_MODEL") {
            self.model = v;
        }
        if let Some(v) = lookup("DT_EMBEDDING_DIM") {
            self.embedding_dim = v
                .parse()
                .map_err(|_| ConfigError::Env { var: "DT_EMBEDDING_DIM", value: v })?;
        }
        if let Some(v) = lookup("DT_RULES_PATH") {
            self.rules_path = Some(v.into());
        }
        if let Some(v) = lookup("DT_RESOURCES_PATH") {
            self.resources_path = Some(v.into());
        }
        Ok(())
    }

    /// File (if any) plus the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.embedding_dim == 0 {
            return Err(ConfigError::Invalid("embedding_dim must be positive".into()));
        }
        if self.backend == BackendKind::External && self.backend_url.is_none() {
            return Err(ConfigError::Invalid("the external backend needs backend_url".into()));
        }
        Ok(())
    }
}
