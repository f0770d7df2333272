//! Engine configuration: one struct per subsystem, all with serde defaults so
//! a config file only needs the keys it overrides.

use crate::gateway::HttpConfig;
use crate::refine::RefineConfig;
use crate::sandbox::SandboxConfig;
use crate::tree::SearchConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Http,
    Replay,
    Synthetic,
}

impl std::str::FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(BackendChoice::Http),
            "replay" => Ok(BackendChoice::Replay),
            "synthetic" => Ok(BackendChoice::Synthetic),
            other => Err(format!("unknown backend {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewaySection {
    pub backend: BackendChoice,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub request_timeout_s: f64,
    pub max_attempts: u32,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Fixture file for the replay backend.
    pub fixtures_path: Option<String>,
    /// Seed for the synthetic backend.
    pub seed: u64,
}

impl Default for GatewaySection {
    fn default() -> Self {
        let http = HttpConfig::default();
        Self {
            backend: BackendChoice::Synthetic,
            base_url: http.base_url,
            model: http.model,
            api_key_env: http.api_key_env,
            max_in_flight: http.max_in_flight,
            request_timeout_s: http.request_timeout_s,
            max_attempts: http.max_attempts,
            temperature: 0.7,
            max_output_tokens: 1024,
            fixtures_path: None,
            seed: 0,
        }
    }
}

impl GatewaySection {
    pub fn http_config(&self) -> HttpConfig {
        HttpConfig {
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            api_key_env: self.api_key_env.clone(),
            max_in_flight: self.max_in_flight,
            request_timeout_s: self.request_timeout_s,
            max_attempts: self.max_attempts,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSection {
    pub difficulty: String,
    pub count: usize,
    pub seed: u64,
    pub n_users: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            difficulty: "hard".to_string(),
            count: 50,
            seed: 0,
            n_users: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraderChoice {
    Oracle,
    Llm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSection {
    pub grader: GraderChoice,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            grader: GraderChoice::Oracle,
        }
    }
}

/// Top-level config file schema.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub gateway: GatewaySection,
    pub sandbox: SandboxConfig,
    pub search: SearchConfig,
    pub refine: RefineConfig,
    pub bench: BenchSection,
    pub reward: RewardSection,
    /// Re-run decomposition every iteration (the literal per-iteration
    /// reading) instead of caching the first decomposition.
    pub redecompose: bool,
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
