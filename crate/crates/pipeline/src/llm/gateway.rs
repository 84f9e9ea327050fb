use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    complete_with_retry, LlmClient, LlmError, LlmRequest, Limiter, ResponseCache, RetryPolicy, DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
};

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    cache_hits: AtomicU64,
    sent: AtomicU64,
    attempts: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub requests: u64,
    pub cache_hits: u64,
    /// Requests that reached the client (cache misses).
    pub sent: u64,
    /// Client calls including retries.
    pub attempts: u64,
}

/// A client plus the policies every pipeline call goes through: cache
/// lookup, concurrency bound, retries, cache store. Clones made with
/// [`Gateway::with_tag`] share the cache, limiter and counters.
#[derive(Clone)]
pub struct Gateway {
    client: Arc<dyn LlmClient>,
    cache: Option<Arc<ResponseCache>>,
    limiter: Arc<Limiter>,
    policy: RetryPolicy,
    model_tag: String,
    max_tokens: u32,
    temperature: f64,
    counters: Arc<Counters>,
}

impl Gateway {
    pub fn new(client: Arc<dyn LlmClient>) -> Self {
        Self {
            client,
            cache: None,
            limiter: Arc::new(Limiter::new(4)),
            policy: RetryPolicy::default(),
            model_tag: "large".into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: DEFAULT_TEMPERATURE,
            counters: Arc::new(Counters::default()),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(Arc::new(cache));
        self
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.limiter = Arc::new(Limiter::new(n.max(1)));
        self
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_tag(&self, tag: &str) -> Self {
        let mut g = self.clone();
        g.model_tag = tag.to_string();
        g
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn client_name(&self) -> &str {
        self.client.name()
    }

    pub fn parallelism(&self) -> usize {
        self.limiter.capacity()
    }

    pub fn request(&self, prompt: &str) -> LlmRequest {
        LlmRequest {
            prompt: prompt.to_string(),
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            model_tag: self.model_tag.clone(),
        }
    }

    /// Sends `prompt` with this gateway's tag, temperature and token limit.
    pub fn ask(&self, prompt: &str) -> Result<String, LlmError> {
        self.complete(&self.request(prompt))
    }

    pub fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        req.validate()?;
        self.counters.requests.fetch_add(1, Ordering::Relaxed);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(req)? {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(hit);
            }
        }
        self.counters.sent.fetch_add(1, Ordering::Relaxed);
        let result = {
            let _permit = self.limiter.acquire();
            complete_with_retry(self.client.as_ref(), req, &self.policy)
        };
        match result {
            Ok((text, attempts)) => {
                self.counters.attempts.fetch_add(attempts as u64, Ordering::Relaxed);
                if let Some(cache) = &self.cache {
                    cache.put(req, &text)?;
                }
                Ok(text)
            }
            Err(e) => {
                let n = match &e {
                    LlmError::Exhausted { attempts } => attempts.len() as u64,
                    _ => 1,
                };
                self.counters.attempts.fetch_add(n, Ordering::Relaxed);
                Err(e)
            }
        }
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            requests: self.counters.requests.load(Ordering::Relaxed),
            cache_hits: self.counters.cache_hits.load(Ordering::Relaxed),
            sent: self.counters.sent.load(Ordering::Relaxed),
            attempts: self.counters.attempts.load(Ordering::Relaxed),
        }
    }
}
