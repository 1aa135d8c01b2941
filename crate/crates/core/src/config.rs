//! Flat `key = value` configuration shared by the server and client
//! subcommands. Unknown keys are rejected so typos surface at startup.

use std::path::{Path, PathBuf};

use crate::chaff::{ChaffPolicy, Priority, Ratio};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config line {0}: {1}")]
    Parse(usize, String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct Config {
    pub listen_addr: String,
    pub data_dir: PathBuf,
    pub ledger_path: PathBuf,
    pub principals_file: PathBuf,
    pub keyring_path: PathBuf,
    pub chaff_priority: Priority,
    /// Explicit ratio override; `None` uses the priority default.
    pub chaff_ratio: Option<Ratio>,
    pub bench_size: usize,
    /// Default principal for client subcommands.
    pub principal: String,
    pub location_zone: String,
    pub application: String,
    pub device_id: String,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            listen_addr: "127.0.0.1:7870".into(),
            data_dir: "aas-data".into(),
            ledger_path: "aas-ledger.bin".into(),
            principals_file: "principals.txt".into(),
            keyring_path: "keyring.txt".into(),
            chaff_priority: Priority::Balanced,
            chaff_ratio: None,
            bench_size: crate::chaff::DEFAULT_BENCH_SIZE,
            principal: "alice".into(),
            location_zone: "zone-default".into(),
            application: concat!("aas/", env!("CARGO_PKG_VERSION")).into(),
            device_id: "00:00:00:00:00:00".into(),
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Parse(lineno, "expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "listen_addr" => config.listen_addr = value.into(),
                "data_dir" => config.data_dir = value.into(),
                "ledger_path" => config.ledger_path = value.into(),
                "principals_file" => config.principals_file = value.into(),
                "keyring_path" => config.keyring_path = value.into(),
                "chaff_priority" => {
                    config.chaff_priority = Priority::parse(value)
                        .map_err(|e| ConfigError::Parse(lineno, e.to_string()))?;
                }
                "chaff_ratio" => {
                    config.chaff_ratio = Some(
                        Ratio::parse(value)
                            .map_err(|e| ConfigError::Parse(lineno, e.to_string()))?,
                    );
                }
                "bench_size" => {
                    config.bench_size = value
                        .parse()
                        .map_err(|_| ConfigError::Parse(lineno, "bench_size must be an integer".into()))?;
                }
                "principal" => config.principal = value.into(),
                "location_zone" => config.location_zone = value.into(),
                "application" => config.application = value.into(),
                "device_id" => config.device_id = value.into(),
                other => {
                    return Err(ConfigError::Parse(lineno, format!("unknown key {other:?}")));
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.bench_size == 0 {
            return Err(ConfigError::Invalid("bench_size must be at least 1".into()));
        }
        if self.bench_size > crate::chaff::MAX_BENCH_SIZE {
            return Err(ConfigError::Invalid("bench_size exceeds 65535".into()));
        }
        Ok(())
    }

    /// Effective chaff policy: explicit ratio if set, else the priority
    /// default, at the configured bench size.
    pub fn policy(&self) -> ChaffPolicy {
        let mut policy =
            ChaffPolicy::for_priority(self.chaff_priority).with_bench_size(self.bench_size);
        if let Some(ratio) = self.chaff_ratio {
            policy = policy.with_ratio(ratio);
        }
        policy
    }
}
