//! Run configuration, loadable from TOML. Command-line flags override it.
//!
//! ```toml
//! [reward]
//! delta = 0.8
//! eta = 0.5
//!
//! [rollout]
//! group_size = 4
//! temperature = 0.8
//! ```

use std::path::Path;

use hoi_core::reward::RewardConfig;
use serde::{Deserialize, Serialize};

/// Group size used when exploring for training data rather than RL.
pub const EXPLORATION_GROUP_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub group_size: usize,
    pub temperature: f64,
    pub max_generation_tokens: u32,
    pub tool_timeout_ms: u64,
    pub policy_timeout_ms: u64,
    /// Extra attempts after a transient backend failure.
    pub retries: u32,
    /// Cap on crop regions per image.
    pub max_crops: usize,
    /// Concurrent rollouts within a group.
    pub parallelism: usize,
    pub want_logprobs: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            temperature: 0.8,
            max_generation_tokens: 4096,
            tool_timeout_ms: 60_000,
            policy_timeout_ms: 600_000,
            retries: 2,
            max_crops: 4,
            parallelism: 4,
            want_logprobs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid reward config: {0}")]
    Reward(#[from] hoi_core::reward::ConfigError),
    #[error("group_size must be at least 1")]
    GroupSize,
    #[error("timeouts must be positive")]
    Timeout,
    #[error("temperature must be finite and non-negative, got {0}")]
    Temperature(f64),
    #[error("parallelism must be at least 1")]
    Parallelism,
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.group_size == 0 {
            return Err(ConfigError::GroupSize);
        }
        if self.tool_timeout_ms == 0 || self.policy_timeout_ms == 0 {
            return Err(ConfigError::Timeout);
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ConfigError::Temperature(self.temperature));
        }
        if self.parallelism == 0 {
            return Err(ConfigError::Parallelism);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub reward: RewardConfig,
    pub rollout: RolloutConfig,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let cfg: AppConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.message().to_owned(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.reward.validate()?;
        self.rollout.validate()
    }
}
