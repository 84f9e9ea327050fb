use std::collections::HashMap;
use std::sync::Mutex;

use super::{cache::prompt_hash, LlmClient, LlmError, LlmRequest};

#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Reply(String),
    Fail(LlmError),
}

type Responder = dyn Fn(&LlmRequest, usize) -> Result<String, LlmError> + Send + Sync;

/// A deterministic test client. Every request is recorded so tests can
/// inspect exactly what was transmitted.
pub struct ScriptedClient {
    name: String,
    responder: Box<Responder>,
    log: Mutex<Vec<LlmRequest>>,
}

impl ScriptedClient {
    fn with_responder(name: &str, responder: Box<Responder>) -> Self {
        Self {
            name: name.to_string(),
            responder,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Replies to every request with `text`.
    pub fn constant(name: &str, text: &str) -> Self {
        let text = text.to_string();
        Self::with_responder(name, Box::new(move |_, _| Ok(text.clone())))
    }

    /// Plays `steps` in call order and repeats the last one once exhausted.
    pub fn sequence(name: &str, steps: Vec<Step>) -> Self {
        assert!(!steps.is_empty(), "a scripted sequence needs at least one step");
        Self::with_responder(
            name,
            Box::new(move |_, call| match &steps[call.min(steps.len() - 1)] {
                Step::Reply(t) => Ok(t.clone()),
                Step::Fail(e) => Err(e.clone()),
            }),
        )
    }

    /// Answers with a pure function of the request.
    pub fn from_fn<F>(name: &str, f: F) -> Self
    where
        F: Fn(&LlmRequest) -> Result<String, LlmError> + Send + Sync + 'static,
    {
        Self::with_responder(name, Box::new(move |req, _| f(req)))
    }

    /// Looks responses up by the SHA-256 hex digest of the prompt; unknown
    /// prompts get `fallback` or a malformed-response error.
    pub fn fixture(name: &str, by_prompt_hash: HashMap<String, String>, fallback: Option<String>) -> Self {
        Self::with_responder(
            name,
            Box::new(move |req, _| {
                let key = prompt_hash(&req.prompt);
                by_prompt_hash
                    .get(&key)
                    .or(fallback.as_ref())
                    .cloned()
                    .ok_or_else(|| LlmError::Malformed(format!("no fixture for prompt {key}")))
            }),
        )
    }

    pub fn calls(&self) -> Vec<LlmRequest> {
        self.log.lock().expect("call log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("call log poisoned").len()
    }
}

impl LlmClient for ScriptedClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        let call = {
            let mut log = self.log.lock().expect("call log poisoned");
            log.push(req.clone());
            log.len() - 1
        };
        (self.responder)(req, call)
    }
}
