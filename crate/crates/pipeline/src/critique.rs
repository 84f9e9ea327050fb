//! Comment threads to unified critiques, filtered critiques, per-aspect
//! conversations and five-question MCQ sets. Only comment text is ever
//! placed in a prompt.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use mvf_core::exec::{self, Execution};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::jsonl::write_jsonl;
use crate::llm::Gateway;
use crate::mcq::{parse_mcqs, McqItem};
use crate::prompts::Template;

pub const NO_COMMENTS: &str = "no_comments";
pub const EMPTY_GENERATION: &str = "empty_generation";
pub const LOW_INFORMATION: &str = "low_information";
pub const UNPARSEABLE_VERDICT: &str = "unparseable_verdict";
pub const UNPARSEABLE_PAIRS: &str = "unparseable_pairs";
pub const MCQ_COUNT_MISMATCH: &str = "mcq_count_mismatch";
pub const MCQS_PER_CRITIQUE: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentThread {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub comments: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    pub critique: String,
    pub source_comment_count: usize,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl CritiqueRecord {
    fn rejected(mut self, reason: &str) -> Self {
        self.accepted = false;
        self.reject_reason = Some(reason.to_string());
        self
    }

    pub fn word_count(&self) -> usize {
        word_count(&self.critique)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aspect {
    Lighting,
    Composition,
    Color,
    Emotion,
    Narrative,
    Technique,
    PostProcessing,
    Other,
}

impl Aspect {
    pub const ALL: [Aspect; 8] = [
        Aspect::Lighting,
        Aspect::Composition,
        Aspect::Color,
        Aspect::Emotion,
        Aspect::Narrative,
        Aspect::Technique,
        Aspect::PostProcessing,
        Aspect::Other,
    ];

    /// The aspects prompted by default: every named aspect, not `other`.
    pub fn prompted() -> Vec<Aspect> {
        Aspect::ALL[..7].to_vec()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::Lighting => "lighting",
            Aspect::Composition => "composition",
            Aspect::Color => "color",
            Aspect::Emotion => "emotion",
            Aspect::Narrative => "narrative",
            Aspect::Technique => "technique",
            Aspect::PostProcessing => "post-processing",
            Aspect::Other => "other",
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aspect {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Aspect::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PipelineError::InvalidArgument(format!("unknown aspect `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub image_id: String,
    pub aspect: Aspect,
    pub question: String,
    pub answer: String,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<String>,
}

/// An aspect whose response could not be parsed; only that aspect is lost.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedAspect {
    pub image_id: String,
    pub aspect: Aspect,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversations {
    pub pairs: Vec<QaPair>,
    pub drops: Vec<DroppedAspect>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaFlag {
    pub image_id: String,
    pub reason: String,
    pub parsed: usize,
    pub detail: String,
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Reads a YES/NO verdict from the leading token after stripping leading
/// whitespace and punctuation. Matching ignores case; anything else is
/// `None`.
pub fn parse_verdict(text: &str) -> Option<bool> {
    let rest = text.trim_start_matches(|c: char| !c.is_alphanumeric());
    let token: String = rest.chars().take_while(|c| c.is_alphanumeric()).collect();
    match token.to_ascii_uppercase().as_str() {
        "YES" => Some(true),
        "NO" => Some(false),
        _ => None,
    }
}

fn numbered(comments: &[String]) -> String {
    comments
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {}", i + 1, c.split_whitespace().collect::<Vec<_>>().join(" ")))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Two-stage prompting: summarize the comments' points, then integrate
/// them into one critique. The image path and bytes never enter a prompt.
pub fn summarize_and_integrate(thread: &CommentThread, llm: &Gateway) -> Result<CritiqueRecord> {
    let record = CritiqueRecord {
        image_id: thread.image_id.clone(),
        image_path: thread.image_path.clone(),
        critique: String::new(),
        source_comment_count: thread.comments.len(),
        accepted: true,
        reject_reason: None,
        category: thread.category.clone(),
    };
    if thread.comments.iter().all(|c| c.trim().is_empty()) {
        return Ok(record.rejected(NO_COMMENTS));
    }
    let comments = numbered(&thread.comments);
    let summary = llm.ask(&Template::SummarizeComments.render(&[("comments", &comments)])?)?;
    if summary.trim().is_empty() {
        return Ok(record.rejected(EMPTY_GENERATION));
    }
    let critique = llm.ask(&Template::IntegrateCritique.render(&[("summary", summary.trim()), ("comments", &comments)])?)?;
    if critique.trim().is_empty() {
        return Ok(record.rejected(EMPTY_GENERATION));
    }
    Ok(CritiqueRecord { critique, ..record })
}

/// Asks the small model whether the critique is informative. Records that
/// were already rejected pass through unchanged.
pub fn filter_critique(record: &CritiqueRecord, small_llm: &Gateway) -> Result<CritiqueRecord> {
    if !record.accepted {
        return Ok(record.clone());
    }
    let verdict = small_llm.ask(&Template::FilterCritique.render(&[("critique", record.critique.trim())])?)?;
    Ok(match parse_verdict(&verdict) {
        Some(true) => record.clone(),
        Some(false) => record.clone().rejected(LOW_INFORMATION),
        None => record.clone().rejected(UNPARSEABLE_VERDICT),
    })
}

/// Parses `Q:`/`A:` line pairs. `NONE` means no pairs; `None` means the
/// response is malformed.
pub fn parse_pairs(text: &str) -> Option<Vec<(String, String)>> {
    let body = text.trim();
    if body.eq_ignore_ascii_case("none") {
        return Some(Vec::new());
    }
    let mut pairs = Vec::new();
    let mut question: Option<String> = None;
    for line in body.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(q) = line.strip_prefix("Q:") {
            if question.is_some() {
                return None;
            }
            question = Some(q.trim().to_string());
        } else if let Some(a) = line.strip_prefix("A:") {
            let q = question.take()?;
            if q.is_empty() || a.trim().is_empty() {
                return None;
            }
            pairs.push((q, a.trim().to_string()));
        } else if let (true, Some((_, last))) = (question.is_none(), pairs.last_mut()) {
            last.push(' ');
            last.push_str(line);
        } else {
            return None;
        }
    }
    (question.is_none() && !pairs.is_empty()).then_some(pairs)
}

/// One generation prompt per aspect, then a per-pair verdict from the small
/// model.
pub fn generate_conversations(
    record: &CritiqueRecord,
    llm: &Gateway,
    small_llm: &Gateway,
    aspects: &[Aspect],
) -> Result<Conversations> {
    if !record.accepted {
        return Err(PipelineError::InvalidArgument(format!(
            "critique {} was not accepted",
            record.image_id
        )));
    }
    let mut out = Conversations::default();
    for &aspect in aspects {
        let text = llm.ask(&Template::Conversation.render(&[
            ("aspect", aspect.as_str()),
            ("critique", record.critique.trim()),
        ])?)?;
        let Some(pairs) = parse_pairs(&text) else {
            out.drops.push(DroppedAspect {
                image_id: record.image_id.clone(),
                aspect,
                reason: UNPARSEABLE_PAIRS.into(),
            });
            continue;
        };
        for (question, answer) in pairs {
            let verdict = small_llm.ask(&Template::FilterPair.render(&[
                ("aspect", aspect.as_str()),
                ("question", &question),
                ("answer", &answer),
            ])?)?;
            let reject_reason = match parse_verdict(&verdict) {
                Some(true) => None,
                Some(false) => Some(LOW_INFORMATION.to_string()),
                None => Some(UNPARSEABLE_VERDICT.to_string()),
            };
            out.pairs.push(QaPair {
                image_id: record.image_id.clone(),
                aspect,
                question,
                answer,
                accepted: reject_reason.is_none(),
                reject_reason,
            });
        }
    }
    Ok(out)
}

/// Generates `count` MCQs grounded in the critique. Any count other than
/// `count` valid items flags the record and emits nothing.
pub fn generate_mcqs(record: &CritiqueRecord, llm: &Gateway, count: usize) -> Result<Result<Vec<McqItem>, VqaFlag>> {
    if !record.accepted {
        return Err(PipelineError::InvalidArgument(format!(
            "critique {} was not accepted",
            record.image_id
        )));
    }
    let text = llm.ask(&Template::GenerateMcq.render(&[
        ("count", &count.to_string()),
        ("critique", record.critique.trim()),
    ])?)?;
    let parsed = parse_mcqs(&text);
    let errors: Vec<String> = parsed.iter().filter_map(|r| r.as_ref().err().map(|e| e.to_string())).collect();
    let valid: Vec<_> = parsed.into_iter().filter_map(|r| r.ok()).collect();
    if valid.len() != count {
        return Ok(Err(VqaFlag {
            image_id: record.image_id.clone(),
            reason: MCQ_COUNT_MISMATCH.into(),
            parsed: valid.len(),
            detail: if errors.is_empty() {
                format!("expected {count} questions, parsed {}", valid.len())
            } else {
                errors.join("; ")
            },
        }));
    }
    Ok(Ok(valid
        .into_iter()
        .enumerate()
        .map(|(i, p)| McqItem {
            id: format!("{}-q{}", record.image_id, i + 1),
            image_id: record.image_id.clone(),
            image_path: record.image_path.clone(),
            question: p.question,
            options: p.options,
            answer: p.answer,
            topics: p.topics,
            scores: None,
            filter_log: Vec::new(),
        })
        .collect()))
}

pub fn generate_vqa(record: &CritiqueRecord, llm: &Gateway) -> Result<Result<Vec<McqItem>, VqaFlag>> {
    generate_mcqs(record, llm, MCQS_PER_CRITIQUE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub aspects: Vec<Aspect>,
    pub conversations: bool,
    pub vqa: bool,
    pub execution: Execution,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            aspects: Aspect::prompted(),
            conversations: true,
            vqa: true,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub threads: usize,
    pub generated: usize,
    pub accepted: usize,
    pub pairs: usize,
    pub accepted_pairs: usize,
    pub dropped_aspects: usize,
    pub mcqs: usize,
    pub flagged: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusBuild {
    /// One record per thread, in input order, with the final accept status.
    pub critiques: Vec<CritiqueRecord>,
    pub pairs: Vec<QaPair>,
    pub drops: Vec<DroppedAspect>,
    pub mcqs: Vec<McqItem>,
    pub flags: Vec<VqaFlag>,
}

impl CorpusBuild {
    pub fn counts(&self) -> CorpusCounts {
        CorpusCounts {
            threads: self.critiques.len(),
            generated: self
                .critiques
                .iter()
                .filter(|c| !matches!(c.reject_reason.as_deref(), Some(NO_COMMENTS) | Some(EMPTY_GENERATION)))
                .count(),
            accepted: self.critiques.iter().filter(|c| c.accepted).count(),
            pairs: self.pairs.len(),
            accepted_pairs: self.pairs.iter().filter(|p| p.accepted).count(),
            dropped_aspects: self.drops.len(),
            mcqs: self.mcqs.len(),
            flagged: self.flags.len(),
        }
    }

    /// Writes critiques.jsonl, qa.jsonl, vqa.jsonl and drops.jsonl.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_jsonl(&dir.join("critiques.jsonl"), &self.critiques)?;
        write_jsonl(&dir.join("qa.jsonl"), &self.pairs)?;
        write_jsonl(&dir.join("vqa.jsonl"), &self.mcqs)?;
        let mut log: Vec<serde_json::Value> = self.drops.iter().map(serde_json::to_value).collect::<Result<_, _>>()?;
        log.extend(self.flags.iter().map(serde_json::to_value).collect::<Result<Vec<_>, _>>()?);
        write_jsonl(&dir.join("drops.jsonl"), &log)
    }
}

struct ThreadOutput {
    critique: CritiqueRecord,
    conversations: Conversations,
    mcqs: Option<Result<Vec<McqItem>, VqaFlag>>,
}

fn process_thread(thread: &CommentThread, llm: &Gateway, small_llm: &Gateway, cfg: &CorpusConfig) -> Result<ThreadOutput> {
    let critique = filter_critique(&summarize_and_integrate(thread, llm)?, small_llm)?;
    let mut conversations = Conversations::default();
    let mut mcqs = None;
    if critique.accepted {
        if cfg.conversations {
            conversations = generate_conversations(&critique, llm, small_llm, &cfg.aspects)?;
        }
        if cfg.vqa {
            mcqs = Some(generate_vqa(&critique, llm)?);
        }
    }
    Ok(ThreadOutput {
        critique,
        conversations,
        mcqs,
    })
}

/// Runs every stage over `threads`. Threads are processed in parallel
/// under the gateways' concurrency bound and results are gathered in input
/// order, so the written files do not depend on scheduling.
pub fn build_corpus(threads: &[CommentThread], llm: &Gateway, small_llm: &Gateway, cfg: &CorpusConfig) -> Result<CorpusBuild> {
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = threads.iter().find(|t| !seen.insert(t.image_id.as_str())) {
        return Err(PipelineError::InvalidArgument(format!("duplicate image_id {}", dup.image_id)));
    }
    let outputs = exec::map(cfg.execution, threads, |t| process_thread(t, llm, small_llm, cfg));
    let mut build = CorpusBuild::default();
    for out in outputs {
        let out = out?;
        build.critiques.push(out.critique);
        build.pairs.extend(out.conversations.pairs);
        build.drops.extend(out.conversations.drops);
        match out.mcqs {
            Some(Ok(items)) => build.mcqs.extend(items),
            Some(Err(flag)) => build.flags.push(flag),
            None => {}
        }
    }
    Ok(build)
}
