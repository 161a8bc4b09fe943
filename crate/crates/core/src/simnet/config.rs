use thiserror::Error;

use crate::exchange::DEFAULT_SESSION_TTL;

pub const DEFAULT_ORGS: [&str; 3] = ["hospital", "homecare", "pharmacy"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("latency range [{min}, {max}] is inverted")]
    InvertedLatency { min: u64, max: u64 },
    #[error("block interval must be positive")]
    ZeroInterval,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    pub latency_min: u64,
    pub latency_max: u64,
    pub block_interval: u64,
    pub session_ttl: u64,
    /// Upper bound on rounds spent settling after the last script line.
    pub drain_rounds: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            latency_min: 10,
            latency_max: 100,
            block_interval: 1_000,
            session_ttl: DEFAULT_SESSION_TTL,
            drain_rounds: 64,
        }
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        SimConfig {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.latency_min > self.latency_max {
            return Err(ConfigError::InvertedLatency {
                min: self.latency_min,
                max: self.latency_max,
            });
        }
        if self.block_interval == 0 {
            return Err(ConfigError::ZeroInterval);
        }
        Ok(())
    }
}
