use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::DegradationPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("environment variable {key}={value:?} is not valid")]
    Env { key: &'static str, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Environment variables recognised by [`ServiceConfig::apply_env`].
pub const ENV_OVERRIDES: [(&str, &str); 9] = [
    ("TEIDSCOPE_LISTEN_ADDR", "listen_addr"),
    ("TEIDSCOPE_MODEL_PATH", "model_path"),
    ("TEIDSCOPE_SMF_ENDPOINT", "smf_endpoint"),
    ("TEIDSCOPE_RING_CAPACITY", "ring_capacity"),
    ("TEIDSCOPE_AUTO_EVALUATE", "auto_evaluate"),
    ("TEIDSCOPE_BUDGET_MS", "policy.default_budget_ms"),
    ("TEIDSCOPE_BREACH_FRACTION", "policy.breach_fraction"),
    ("TEIDSCOPE_MIN_WINDOWS", "policy.min_windows"),
    ("TEIDSCOPE_COOLDOWN_S", "policy.cooldown_s"),
];

/// The `[service]` table of a teidscope config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen_addr: String,
    pub model_path: Option<PathBuf>,
    /// Base URL; notifications go to `{smf_endpoint}/v1/notifications`.
    pub smf_endpoint: Option<String>,
    pub ring_capacity: usize,
    /// Classify, detect and notify on every accepted report.
    pub auto_evaluate: bool,
    pub notify_timeout_ms: u64,
    pub policy: DegradationPolicy,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen_addr: "127.0.0.1:8080".into(),
            model_path: None,
            smf_endpoint: None,
            ring_capacity: 8,
            auto_evaluate: true,
            notify_timeout_ms: 2_000,
            policy: DegradationPolicy::default(),
        }
    }
}

#[derive(Deserialize)]
struct FileView {
    #[serde(default)]
    service: ServiceConfig,
}

impl ServiceConfig {
    /// Reads the `[service]` table; other tables are left to their owners.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let view: FileView = toml::from_str(text)?;
        Ok(view.service)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Applies overrides from `lookup`, typically the process environment.
    pub fn apply_env<F>(&mut self, lookup: F) -> Result<(), ConfigError>
    where
        F: Fn(&str) -> Option<String>,
    {
        fn parse<T: std::str::FromStr>(key: &'static str, v: String) -> Result<T, ConfigError> {
            v.trim().parse().map_err(|_| ConfigError::Env { key, value: v })
        }
        for (key, _) in ENV_OVERRIDES {
            let Some(v) = lookup(key) else { continue };
            match key {
                "TEIDSCOPE_LISTEN_ADDR" => self.listen_addr = v,
                "TEIDSCOPE_MODEL_PATH" => self.model_path = Some(PathBuf::from(v)),
                "TEIDSCOPE_SMF_ENDPOINT" => self.smf_endpoint = Some(v),
                "TEIDSCOPE_RING_CAPACITY" => self.ring_capacity = parse(key, v)?,
                "TEIDSCOPE_AUTO_EVALUATE" => self.auto_evaluate = parse(key, v)?,
                "TEIDSCOPE_BUDGET_MS" => self.policy.default_budget_ms = parse(key, v)?,
                "TEIDSCOPE_BREACH_FRACTION" => self.policy.breach_fraction = parse(key, v)?,
                "TEIDSCOPE_MIN_WINDOWS" => self.policy.min_windows = parse(key, v)?,
                "TEIDSCOPE_COOLDOWN_S" => self.policy.cooldown_s = parse(key, v)?,
                _ => unreachable!("key listed in ENV_OVERRIDES"),
            }
        }
        Ok(())
    }

    pub fn apply_process_env(&mut self) -> Result<(), ConfigError> {
        self.apply_env(|k| std::env::var(k).ok())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ring_capacity == 0 {
            return Err(ConfigError::Invalid("ring_capacity must be >= 1".into()));
        }
        if self.ring_capacity < self.policy.min_windows {
            return Err(ConfigError::Invalid(format!(
                "ring_capacity {} cannot hold policy.min_windows {}",
                self.ring_capacity, self.policy.min_windows
            )));
        }
        self.policy
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
