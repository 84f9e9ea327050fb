use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use mvf_pipeline::llm::{
    complete_with_retry, Gateway, LlmClient, LlmError, LlmRequest, ResponseCache, RetryPolicy, ScriptedClient, Step,
};

fn req() -> LlmRequest {
    LlmRequest::new("large", "Summarize these comments.")
}

#[test]
fn mock_answers_in_one_attempt() {
    let client = ScriptedClient::constant("mock", "fixture response");
    let (text, attempts) = complete_with_retry(&client, &req(), &RetryPolicy::immediate(3)).unwrap();
    assert_eq!(text, "fixture response");
    assert_eq!(attempts, 1);
}

#[test]
fn two_failures_then_success_on_attempt_three() {
    let client = ScriptedClient::sequence(
        "flaky",
        vec![
            Step::Fail(LlmError::Transport("connection reset".into())),
            Step::Fail(LlmError::RateLimited("429".into())),
            Step::Reply("ok".into()),
        ],
    );
    let (text, attempts) = complete_with_retry(&client, &req(), &RetryPolicy::immediate(3)).unwrap();
    assert_eq!((text.as_str(), attempts), ("ok", 3));
    assert_eq!(client.call_count(), 3);
}

#[test]
fn budget_exhaustion_reports_every_attempt() {
    let client = ScriptedClient::sequence("down", vec![Step::Fail(LlmError::Malformed("no choices".into()))]);
    let policy = RetryPolicy {
        max_attempts: 2,
        base_delay_ms: 1,
        max_delay_ms: 10,
    };
    match complete_with_retry(&client, &req(), &policy) {
        Err(LlmError::Exhausted { attempts }) => {
            assert_eq!(attempts.len(), 2);
            assert_eq!(attempts[0].attempt, 1);
            assert_eq!(attempts[0].backoff_ms, 1);
            assert_eq!(attempts[1].backoff_ms, 0);
            assert!(attempts.iter().all(|a| a.error.contains("no choices")));
        }
        other => panic!("expected exhaustion, got {other:?}"),
    }
    assert_eq!(client.call_count(), 2);
}

struct Slow {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl LlmClient for Slow {
    fn name(&self) -> &str {
        "slow"
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(10));
        self.current.fetch_sub(1, Ordering::SeqCst);
        Ok(req.prompt.to_uppercase())
    }
}

#[test]
fn gateway_bounds_requests_in_flight() {
    let slow = Arc::new(Slow {
        current: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
    });
    let gw = Gateway::new(slow.clone()).with_parallelism(3);
    std::thread::scope(|s| {
        for i in 0..12 {
            let gw = gw.clone();
            s.spawn(move || assert_eq!(gw.ask(&format!("p{i}")).unwrap(), format!("P{i}")));
        }
    });
    assert!(slow.peak.load(Ordering::SeqCst) <= 3);
    assert_eq!(gw.stats().sent, 12);
}

#[test]
fn cache_files_are_named_by_hash() {
    let dir = tempfile::tempdir().unwrap();
    let gw = Gateway::new(Arc::new(ScriptedClient::constant("m", "r"))).with_cache(ResponseCache::open(dir.path()).unwrap());
    gw.ask("one").unwrap();
    gw.with_tag("small").ask("one").unwrap();
    gw.ask("two").unwrap();
    let names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.len(), 3);
    assert!(names.iter().all(|n| n.len() == 64 + 5 && n.ends_with(".json")));
}
