use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use tradeslot_core::ExtractionPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("environment variable {name}: {message}")]
    Env { name: &'static str, message: String },
}

/// Service settings. Every field can be overridden by a `TRADESLOT_*`
/// environment variable named after it, e.g. `TRADESLOT_PORT`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Provider TOML; the rule-based provider with built-in names when unset.
    pub provider_config: Option<PathBuf>,
    /// Price feed CSV (`symbol,tick,price`); a seeded walk per known code when unset.
    pub feed: Option<PathBuf>,
    pub session_cap: usize,
    pub max_turns: u32,
    pub auto_execute: bool,
    pub policy: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            provider_config: None,
            feed: None,
            session_cap: 64,
            max_turns: 5,
            auto_execute: false,
            policy: "strict".into(),
        }
    }
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads a TOML file. Relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.provider_config, &mut cfg.feed].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn parsed<T: std::str::FromStr>(name: &'static str, raw: String) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            raw.trim().parse().map_err(|e: T::Err| ConfigError::Env {
                name,
                message: e.to_string(),
            })
        }
        if let Some(v) = lookup("TRADESLOT_HOST") {
            self.host = v;
        }
        if let Some(v) = lookup("TRADESLOT_PORT") {
            self.port = parsed("TRADESLOT_PORT", v)?;
        }
        if let Some(v) = lookup("TRADESLOT_PROVIDER_CONFIG") {
            self.provider_config = Some(v.into());
        }
        if let Some(v) = lookup("TRADESLOT_FEED") {
            self.feed = Some(v.into());
        }
        if let Some(v) = lookup("TRADESLOT_SESSION_CAP") {
            self.session_cap = parsed("TRADESLOT_SESSION_CAP", v)?;
        }
        if let Some(v) = lookup("TRADESLOT_MAX_TURNS") {
            self.max_turns = parsed("TRADESLOT_MAX_TURNS", v)?;
        }
        if let Some(v) = lookup("TRADESLOT_AUTO_EXECUTE") {
            self.auto_execute = parsed("TRADESLOT_AUTO_EXECUTE", v)?;
        }
        if let Some(v) = lookup("TRADESLOT_POLICY") {
            self.policy = v;
        }
        self.extraction_policy()?;
        Ok(())
    }

    pub fn extraction_policy(&self) -> Result<ExtractionPolicy, ConfigError> {
        self.policy.parse().map_err(ConfigError::Parse)
    }
}
