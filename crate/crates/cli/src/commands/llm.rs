//! LLM backend settings shared by the pipeline commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use mvf_pipeline::llm::{
    Gateway, HttpLlmClient, HttpSettings, LlmClient, ResponseCache, RetryPolicy, DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
};
use mvf_pipeline::offline::OfflineModel;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Deterministic built-in model; no network.
    #[default]
    Offline,
    /// Chat-completion endpoint at `LLM_BASE_URL`.
    Http,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub backend: Backend,
    /// Response cache directory; `<out>/llm_cache` when unset.
    pub cache_dir: Option<PathBuf>,
    pub parallelism: usize,
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub timeout_secs: u64,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Tag for generation stages.
    pub large_tag: String,
    /// Tag for the critique and conversation quality filters.
    pub small_tag: String,
    /// Tag for the benchmark's blind-answer and scoring stages.
    pub filter_tag: String,
    /// Tag to provider model name for the http backend.
    pub models: BTreeMap<String, String>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        let p = RetryPolicy::default();
        Self {
            backend: Backend::Offline,
            cache_dir: None,
            parallelism: 4,
            max_attempts: p.max_attempts,
            base_delay_ms: p.base_delay_ms,
            max_delay_ms: p.max_delay_ms,
            timeout_secs: 120,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            large_tag: "large".into(),
            small_tag: "small".into(),
            filter_tag: "large".into(),
            models: BTreeMap::new(),
        }
    }
}

impl LlmSettings {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.parallelism == 0 {
            return Err(CliError::Config("llm.parallelism must be >= 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(CliError::Config("llm.max_attempts must be >= 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(CliError::Config(format!("llm.temperature must be >= 0, got {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(CliError::Config("llm.max_tokens must be >= 1".into()));
        }
        Ok(())
    }

    pub fn client(&self) -> Result<Arc<dyn LlmClient>, CliError> {
        Ok(match self.backend {
            Backend::Offline => Arc::new(OfflineModel::new()),
            Backend::Http => {
                let mut settings =
                    HttpSettings::from_env(self.models.clone()).map_err(|e| CliError::Config(e.to_string()))?;
                settings.timeout_secs = self.timeout_secs;
                Arc::new(HttpLlmClient::new(settings))
            }
        })
    }

    /// A gateway tagged `large_tag`. Derive the other stages' gateways with
    /// [`Gateway::with_tag`] so they share the cache, limiter and counters.
    pub fn gateway(&self, out: &Path) -> anyhow::Result<Gateway> {
        self.validate()?;
        let cache_dir = self.cache_dir.clone().unwrap_or_else(|| out.join("llm_cache"));
        let cache = ResponseCache::open(&cache_dir)?;
        Ok(Gateway::new(self.client()?)
            .with_cache(cache)
            .with_parallelism(self.parallelism)
            .with_policy(RetryPolicy {
                max_attempts: self.max_attempts,
                base_delay_ms: self.base_delay_ms,
                max_delay_ms: self.max_delay_ms,
            })
            .with_temperature(self.temperature)
            .with_max_tokens(self.max_tokens)
            .with_tag(&self.large_tag))
    }
}
