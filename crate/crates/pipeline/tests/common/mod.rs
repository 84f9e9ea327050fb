#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use mvf_pipeline::critique::{CommentThread, CritiqueRecord};
use mvf_pipeline::llm::{Gateway, LlmError, LlmRequest, RetryPolicy, ScriptedClient};
use mvf_pipeline::mcq::{McqItem, BENCH_LETTERS};
use mvf_pipeline::prompts::Template;

/// A scripted client that dispatches on the prompt template.
pub fn by_template<F>(f: F) -> Arc<ScriptedClient>
where
    F: Fn(Template, &LlmRequest) -> Result<String, LlmError> + Send + Sync + 'static,
{
    Arc::new(ScriptedClient::from_fn("scripted", move |req| {
        let t = Template::of_prompt(&req.prompt).expect("prompt from a shipped template");
        f(t, req)
    }))
}

pub fn gateway(client: Arc<ScriptedClient>) -> Gateway {
    Gateway::new(client).with_policy(RetryPolicy::immediate(1))
}

pub fn thread(id: &str, comments: &[&str]) -> CommentThread {
    CommentThread {
        image_id: id.into(),
        image_path: Some(format!("/photos/{id}.jpg")),
        title: None,
        comments: comments.iter().map(|c| c.to_string()).collect(),
        category: None,
    }
}

pub fn accepted(id: &str, text: &str) -> CritiqueRecord {
    CritiqueRecord {
        image_id: id.into(),
        image_path: Some(format!("/photos/{id}.jpg")),
        critique: text.into(),
        source_comment_count: 3,
        accepted: true,
        reject_reason: None,
        category: None,
    }
}

pub fn mcq_block(n: usize, answer: char, topic: &str) -> String {
    format!(
        "Q{n}: Question number {n}?\nA) first {n}\nB) second {n}\nC) third {n}\nD) fourth {n}\nAnswer: {answer}\nTopics: {topic}"
    )
}

pub fn item(id: &str, answer: char, topics: &[&str]) -> McqItem {
    McqItem {
        id: id.into(),
        image_id: id.split('-').next().unwrap_or(id).into(),
        image_path: None,
        question: format!("What about {id}?"),
        options: BENCH_LETTERS.iter().map(|&l| (l, format!("option {l} of {id}"))).collect::<BTreeMap<_, _>>(),
        answer,
        topics: topics.iter().map(|t| t.to_string()).collect(),
        scores: None,
        filter_log: vec![],
    }
}

/// The prompt's `Question:` line, as rendered by the blind-answer and
/// scoring templates.
pub fn question_of(prompt: &str) -> &str {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix("Question: "))
        .expect("question line")
}
