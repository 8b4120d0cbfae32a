use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::http::{HttpChat, HttpEditor, HttpGenerator, Transport, UreqTransport};
use super::vqa::ChatVqa;
use super::{BackendError, ChatBackend, Editor, Generator, VqaBackend};
use crate::model::Prices;
use crate::simworld::{NoisyPlanner, SimEditor, SimGenerator, SimOptions, SimPlanner, SimVqa};

fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    2
}
fn default_in_flight() -> usize {
    4
}
fn default_backoff_initial() -> u64 {
    500
}
fn default_backoff_max() -> u64 {
    8000
}

/// Connection settings for one HTTP backend.
///
/// Secrets are never read from configuration: `api_key_env` names the
/// environment variable holding the key. Unknown fields are rejected, so a
/// stray `api_key` entry fails loudly instead of being ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub price_per_1k_prompt_tokens: f64,
    #[serde(default)]
    pub price_per_1k_completion_tokens: f64,
    /// Concurrent requests allowed against this endpoint.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_backoff_initial")]
    pub backoff_initial_ms: u64,
    #[serde(default = "default_backoff_max")]
    pub backoff_max_ms: u64,
}

impl BackendConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        BackendConfig {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            api_key_env: None,
            timeout_seconds: default_timeout(),
            max_retries: default_retries(),
            seed: 0,
            temperature: 0.0,
            price_per_1k_prompt_tokens: 0.0,
            price_per_1k_completion_tokens: 0.0,
            max_in_flight: default_in_flight(),
            backoff_initial_ms: default_backoff_initial(),
            backoff_max_ms: default_backoff_max(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::Config(m));
        if self.endpoint_url.trim().is_empty() {
            return bad("endpoint_url is empty".into());
        }
        if !(self.timeout_seconds > 0.0 && self.timeout_seconds.is_finite()) {
            return bad(format!("timeout_seconds must be positive, got {}", self.timeout_seconds));
        }
        if self.price_per_1k_prompt_tokens < 0.0 || self.price_per_1k_completion_tokens < 0.0 {
            return bad("prices must be non-negative".into());
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        if self.backoff_initial_ms > self.backoff_max_ms {
            return bad("backoff_initial_ms exceeds backoff_max_ms".into());
        }
        Ok(())
    }

    /// Reads the API key from the configured environment variable. No
    /// variable configured means no key; a configured but unset variable is
    /// an error.
    pub fn api_key(&self) -> Result<Option<String>, BackendError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| BackendError::Config(format!("environment variable {var} is not set"))),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_seconds)
    }

    pub fn prices(&self) -> Prices {
        Prices {
            per_1k_prompt: self.price_per_1k_prompt_tokens,
            per_1k_completion: self.price_per_1k_completion_tokens,
        }
    }
}

/// One `[generator]`, `[editor]`, `[planner]` or `[vqa]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RoleConfig {
    Http(BackendConfig),
    Sim(SimOptions),
}

impl RoleConfig {
    fn http(&self) -> Option<&BackendConfig> {
        match self {
            RoleConfig::Http(c) => Some(c),
            RoleConfig::Sim(_) => None,
        }
    }

    fn transport(c: &BackendConfig) -> Result<Arc<dyn Transport>, BackendError> {
        c.validate()?;
        Ok(Arc::new(UreqTransport::new(c.timeout())))
    }

    pub fn prices(&self) -> Prices {
        match self {
            RoleConfig::Http(c) => c.prices(),
            RoleConfig::Sim(o) => o.prices(),
        }
    }

    pub fn build_generator(&self) -> Result<Arc<dyn Generator>, BackendError> {
        Ok(match self {
            RoleConfig::Http(c) => Arc::new(HttpGenerator::new(c.clone(), Self::transport(c)?)?),
            RoleConfig::Sim(o) => Arc::new(SimGenerator::new(o.clone())),
        })
    }

    pub fn build_editor(&self) -> Result<Arc<dyn Editor>, BackendError> {
        Ok(match self {
            RoleConfig::Http(c) => Arc::new(HttpEditor::new(c.clone(), Self::transport(c)?)?),
            RoleConfig::Sim(o) => Arc::new(SimEditor::new(o.clone())),
        })
    }

    pub fn build_chat(&self) -> Result<Arc<dyn ChatBackend>, BackendError> {
        Ok(match self {
            RoleConfig::Http(c) => Arc::new(HttpChat::new(c.clone(), Self::transport(c)?)?),
            RoleConfig::Sim(o) if o.plan_drop_rate > 0.0 || o.plan_corrupt_rate > 0.0 => {
                Arc::new(NoisyPlanner::new(SimPlanner::new(o.clone()), o.plan_drop_rate, o.plan_corrupt_rate, o.seed))
            }
            RoleConfig::Sim(o) => Arc::new(SimPlanner::new(o.clone())),
        })
    }

    /// An HTTP VQA role is a chat backend driven by a yes/no prompt.
    pub fn build_vqa(&self) -> Result<Arc<dyn VqaBackend>, BackendError> {
        Ok(match self {
            RoleConfig::Http(c) => Arc::new(ChatVqa::new(HttpChat::new(c.clone(), Self::transport(c)?)?, c.seed)),
            RoleConfig::Sim(_) => Arc::new(SimVqa),
        })
    }

    /// Seed and temperature requests for this role should carry.
    pub fn sampling(&self) -> (u64, f64) {
        self.http().map_or((0, 0.0), |c| (c.seed, c.temperature))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_rejects_inline_keys() {
        let sim: RoleConfig = toml::from_str("kind = \"sim\"\nerror_rate = 0.3\n").unwrap();
        assert!(matches!(sim, RoleConfig::Sim(ref o) if o.error_rate == 0.3));
        let http: RoleConfig = toml::from_str(
            "kind = \"http\"\nendpoint_url = \"http://localhost:9\"\nmodel_name = \"m\"\napi_key_env = \"KEY\"\n",
        )
        .unwrap();
        match &http {
            RoleConfig::Http(c) => {
                assert_eq!(c.max_retries, 2);
                assert_eq!(c.seed, 0);
                assert_eq!(c.temperature, 0.0);
            }
            other => panic!("{other:?}"),
        }
        let leaked = toml::from_str::<RoleConfig>(
            "kind = \"http\"\nendpoint_url = \"http://x\"\nmodel_name = \"m\"\napi_key = \"sk-123\"\n",
        );
        assert!(leaked.is_err());
    }

    #[test]
    fn validation() {
        let mut c = BackendConfig::new("http://x", "m");
        assert!(c.validate().is_ok());
        c.timeout_seconds = 0.0;
        assert!(c.validate().is_err());
        c.timeout_seconds = 1.0;
        c.price_per_1k_prompt_tokens = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn missing_key_variable() {
        let mut c = BackendConfig::new("http://x", "m");
        c.api_key_env = Some("GRAPE_TEST_SURELY_UNSET_VARIABLE".into());
        assert!(matches!(c.api_key(), Err(BackendError::Config(_))));
    }
}
