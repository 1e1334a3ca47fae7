use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read registry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid registry: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("backend {name}: {message}")]
    Invalid { name: String, message: String },
    #[error("duplicate backend name {0}")]
    Duplicate(String),
    #[error("unknown backend {0}")]
    Unknown(String),
}

fn default_max_tokens() -> u32 {
    512
}

fn default_timeout() -> f64 {
    120.0
}

fn default_max_retries() -> u32 {
    2
}

fn default_retry_base_ms() -> u64 {
    200
}

/// Connection settings for one OpenAI-compatible chat endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub name: String,
    pub base_url: String,
    pub model_id: String,
    /// Environment variable holding the bearer token. Unset or empty means
    /// no `Authorization` header is sent.
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Per-attempt timeout in seconds.
    #[serde(default = "default_timeout", rename = "timeout_secs")]
    pub timeout: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First backoff delay; doubles per retry.
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_ms: u64,
}

impl BackendConfig {
    pub fn new(name: &str, base_url: &str, model_id: &str) -> Self {
        BackendConfig {
            name: name.to_string(),
            base_url: base_url.to_string(),
            model_id: model_id.to_string(),
            api_key_env: String::new(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout: default_timeout(),
            max_retries: default_max_retries(),
            retry_base_ms: default_retry_base_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |message: &str| ConfigError::Invalid {
            name: self.name.clone(),
            message: message.to_string(),
        };
        if self.name.trim().is_empty() {
            return Err(invalid("empty name"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(invalid("temperature must be >= 0"));
        }
        if self.max_tokens < 1 {
            return Err(invalid("max_tokens must be >= 1"));
        }
        if !(self.timeout > 0.0 && self.timeout.is_finite()) {
            return Err(invalid("timeout_secs must be > 0"));
        }
        match reqwest::Url::parse(&self.base_url) {
            Ok(url) if matches!(url.scheme(), "http" | "https") => Ok(()),
            _ => Err(invalid("base_url must be an http(s) URL")),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout)
    }

    pub fn completions_url(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.base_url.trim_end_matches('/')
        )
    }

    pub fn api_key(&self) -> Option<String> {
        if self.api_key_env.is_empty() {
            return None;
        }
        std::env::var(&self.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
    }
}

/// Named set of backends, loaded from a TOML file of `[[backend]]` tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    #[serde(default, rename = "backend")]
    pub backends: Vec<BackendConfig>,
}

impl Registry {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let registry: Registry = toml::from_str(text)?;
        let mut names = BTreeSet::new();
        for b in &registry.backends {
            b.validate()?;
            if !names.insert(b.name.as_str()) {
                return Err(ConfigError::Duplicate(b.name.clone()));
            }
        }
        Ok(registry)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The four backends of the default deployment, on localhost ports.
    pub fn shipped() -> Self {
        Self::parse(include_str!("../../config/registry.toml")).expect("shipped registry is valid")
    }

    pub fn get(&self, name: &str) -> Result<&BackendConfig, ConfigError> {
        self.backends
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| ConfigError::Unknown(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.backends.iter().map(|b| b.name.as_str())
    }
}
