//! The single choke point for LLM calls: request type, client interface,
//! retry with exponential backoff, a resumable on-disk response cache and a
//! concurrency bound.

mod cache;
mod gateway;
mod http;
mod limit;
mod scripted;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CacheEntry, ResponseCache};
pub use gateway::{Gateway, GatewayStats};
pub use http::{HttpLlmClient, HttpSettings, API_KEY_ENV, BASE_URL_ENV};
pub use limit::{Limiter, Permit};
pub use scripted::{ScriptedClient, Step};

/// Default sampling temperature for every pipeline prompt.
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    /// Logical model name such as `large` or `small`; clients map it to a
    /// concrete model.
    pub model_tag: String,
}

impl LlmRequest {
    pub fn new(model_tag: &str, prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            model_tag: model_tag.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("prompt is empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attempt {
    /// 1-based attempt number.
    pub attempt: u32,
    pub error: String,
    /// Delay slept before the next attempt, zero after the last one.
    pub backoff_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),

    #[error("rate limited: {0}")]
    RateLimited(String),

    #[error("malformed response: {0}")]
    Malformed(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error("gave up after {} attempts: {}", attempts.len(), attempts.last().map_or("", |a| a.error.as_str()))]
    Exhausted { attempts: Vec<Attempt> },
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Transport(_) | Self::RateLimited(_) | Self::Malformed(_))
    }
}

/// Implementations must be safe to call from several threads at once.
pub trait LlmClient: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after every further failure.
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// A policy that retries without sleeping, for tests and mock runs.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_attempts == 0 {
            return Err(LlmError::InvalidRequest("max_attempts must be at least 1".into()));
        }
        Ok(())
    }

    /// Delay after the `attempt`-th failure (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 2u64.saturating_pow(attempt.saturating_sub(1));
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

/// Calls `client` until it succeeds, retrying retryable errors with
/// exponential backoff. Returns the response and the number of attempts.
pub fn complete_with_retry(
    client: &dyn LlmClient,
    req: &LlmRequest,
    policy: &RetryPolicy,
) -> Result<(String, u32), LlmError> {
    req.validate()?;
    policy.validate()?;
    let mut attempts = Vec::new();
    for attempt in 1..=policy.max_attempts {
        match client.complete(req) {
            Ok(text) => return Ok((text, attempt)),
            Err(e) if e.is_retryable() => {
                let last = attempt == policy.max_attempts;
                let delay = if last { Duration::ZERO } else { policy.backoff(attempt) };
                attempts.push(Attempt {
                    attempt,
                    error: e.to_string(),
                    backoff_ms: delay.as_millis() as u64,
                });
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(LlmError::Exhausted { attempts })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        assert!(LlmRequest::new("large", "hi").validate().is_ok());
        assert!(LlmRequest::new("large", "  ").validate().is_err());
        let mut r = LlmRequest::new("large", "hi");
        r.temperature = -0.1;
        assert!(r.validate().is_err());
        r.temperature = f64::NAN;
        assert!(r.validate().is_err());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 100,
            max_delay_ms: 350,
        };
        let ms: Vec<u128> = (1..=4).map(|a| p.backoff(a).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 350, 350]);
    }

    #[test]
    fn non_retryable_errors_stop_immediately() {
        let client = ScriptedClient::sequence("s", vec![Step::Fail(LlmError::InvalidRequest("bad".into()))]);
        let err = complete_with_retry(&client, &LlmRequest::new("large", "x"), &RetryPolicy::immediate(3)).unwrap_err();
        assert!(matches!(err, LlmError::InvalidRequest(_)));
        assert_eq!(client.calls().len(), 1);
    }

    #[test]
    fn zero_attempt_policy_is_rejected() {
        let client = ScriptedClient::constant("s", "ok");
        assert!(complete_with_retry(&client, &LlmRequest::new("large", "x"), &RetryPolicy::immediate(0)).is_err());
        assert!(client.calls().is_empty());
    }
}
