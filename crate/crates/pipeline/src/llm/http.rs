use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{LlmClient, LlmError, LlmRequest};

pub const API_KEY_ENV: &str = "LLM_API_KEY";
pub const BASE_URL_ENV: &str = "LLM_BASE_URL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpSettings {
    /// Endpoint root; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    /// Model tag to provider model name. Unmapped tags are sent verbatim.
    pub models: BTreeMap<String, String>,
    pub timeout_secs: u64,
}

impl HttpSettings {
    pub fn from_env(models: BTreeMap<String, String>) -> Result<Self, LlmError> {
        let base_url = std::env::var(BASE_URL_ENV)
            .map_err(|_| LlmError::InvalidRequest(format!("{BASE_URL_ENV} is not set")))?;
        Ok(Self {
            base_url,
            api_key: std::env::var(API_KEY_ENV).ok(),
            models,
            timeout_secs: 120,
        })
    }
}

/// A chat-completion client over blocking HTTP.
///
/// Request body: `{"model", "messages": [{"role": "user", "content"}],
/// "max_tokens", "temperature"}`. The reply text is read from
/// `choices[0].message.content`. Status 429 maps to a rate-limit error,
/// 5xx and connection failures to transport errors, other statuses to
/// non-retryable invalid-request errors.
pub struct HttpLlmClient {
    settings: HttpSettings,
    agent: ureq::Agent,
}

impl HttpLlmClient {
    pub fn new(settings: HttpSettings) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build();
        Self { settings, agent }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.settings.base_url.trim_end_matches('/'))
    }

    pub fn body(&self, req: &LlmRequest) -> Value {
        let model = self
            .settings
            .models
            .get(&req.model_tag)
            .cloned()
            .unwrap_or_else(|| req.model_tag.clone());
        json!({
            "model": model,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        })
    }
}

pub(crate) fn parse_chat_response(body: &Value) -> Result<String, LlmError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::Malformed("response has no choices[0].message.content".into()))
}

impl LlmClient for HttpLlmClient {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        let mut call = self.agent.post(&self.endpoint()).set("Content-Type", "application/json");
        if let Some(key) = &self.settings.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        match call.send_json(self.body(req)) {
            Ok(resp) => {
                let body: Value = resp
                    .into_json()
                    .map_err(|e| LlmError::Malformed(format!("response is not JSON: {e}")))?;
                parse_chat_response(&body)
            }
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {}", text.chars().take(200).collect::<String>());
                Err(match code {
                    429 => LlmError::RateLimited(msg),
                    500..=599 => LlmError::Transport(msg),
                    _ => LlmError::InvalidRequest(msg),
                })
            }
            Err(ureq::Error::Transport(t)) => Err(LlmError::Transport(t.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned HTTP response per connection and returns each
    /// received request body.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn client(url: String) -> HttpLlmClient {
        HttpLlmClient::new(HttpSettings {
            base_url: url,
            api_key: Some("k".into()),
            models: [("small".to_string(), "tiny-model".to_string())].into(),
            timeout_secs: 5,
        })
    }

    #[test]
    fn chat_completion_round_trip() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"YES"}}]}"#.to_string();
        let (url, handle) = serve(vec![(200, ok), (429, "{}".into()), (503, "{}".into()), (400, "{}".into())]);
        let c = client(url);
        let req = LlmRequest::new("small", "is it good?");
        assert_eq!(c.complete(&req).unwrap(), "YES");
        assert!(matches!(c.complete(&req), Err(LlmError::RateLimited(_))));
        assert!(matches!(c.complete(&req), Err(LlmError::Transport(_))));
        assert!(matches!(c.complete(&req), Err(LlmError::InvalidRequest(_))));
        let bodies = handle.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["model"], "tiny-model");
        assert_eq!(sent["messages"][0]["content"], "is it good?");
        assert_eq!(sent["temperature"], 0.0);
    }

    #[test]
    fn malformed_bodies_are_retryable_errors() {
        let e = parse_chat_response(&json!({"choices": []})).unwrap_err();
        assert!(e.is_retryable());
    }
}
