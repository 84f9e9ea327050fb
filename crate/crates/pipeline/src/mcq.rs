//! Multiple-choice items shared by the critique, bench and eval stages.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub const BENCH_LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStage {
    VisualDependency,
    Scoring,
    Topk,
}

impl FilterStage {
    pub const ORDER: [FilterStage; 3] = [FilterStage::VisualDependency, FilterStage::Scoring, FilterStage::Topk];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStageResult {
    pub stage: FilterStage,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scores {
    pub relevance: u8,
    pub visual_dependency: u8,
    pub expertise: u8,
}

impl Scores {
    pub fn sum(&self) -> u32 {
        self.relevance as u32 + self.visual_dependency as u32 + self.expertise as u32
    }

    pub fn mean(&self) -> f64 {
        self.sum() as f64 / 3.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McqItem {
    pub id: String,
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    pub question: String,
    pub options: BTreeMap<char, String>,
    pub answer: char,
    #[serde(default)]
    pub topics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Scores>,
    #[serde(default)]
    pub filter_log: Vec<FilterStageResult>,
}

impl McqItem {
    /// Checks the structural invariants for `2..=6` consecutive option
    /// letters starting at `A`.
    pub fn validate(&self) -> Result<()> {
        let n = self.options.len();
        if !(2..=6).contains(&n) {
            return Err(self.invalid(format!("has {n} options, expected 2 to 6")));
        }
        if !self.options.keys().copied().eq(('A'..).take(n)) {
            return Err(self.invalid("option letters must run consecutively from A".into()));
        }
        if !self.options.contains_key(&self.answer) {
            return Err(self.invalid(format!("answer {} is not an option", self.answer)));
        }
        if self.question.trim().is_empty() || self.options.values().any(|o| o.trim().is_empty()) {
            return Err(self.invalid("question and options must be nonempty".into()));
        }
        Ok(())
    }

    /// Bench items additionally need exactly the options A to D and at
    /// least one topic.
    pub fn validate_bench(&self) -> Result<()> {
        self.validate()?;
        if self.options.len() != 4 {
            return Err(self.invalid(format!("bench items need 4 options, got {}", self.options.len())));
        }
        if self.topics.is_empty() {
            return Err(self.invalid("bench items need at least one topic".into()));
        }
        Ok(())
    }

    fn invalid(&self, msg: String) -> PipelineError {
        PipelineError::InvalidArgument(format!("item {}: {msg}", self.id))
    }

    /// `A) text` lines in letter order.
    pub fn options_block(&self) -> String {
        self.options
            .iter()
            .map(|(l, t)| format!("{l}) {t}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn last_stage(&self) -> Option<&FilterStageResult> {
        self.filter_log.last()
    }
}

/// One MCQ read from generator output, before ids are assigned.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedMcq {
    pub question: String,
    pub options: BTreeMap<char, String>,
    pub answer: char,
    pub topics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct McqParseError {
    pub block: usize,
    pub reason: String,
}

impl fmt::Display for McqParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "question block {}: {}", self.block, self.reason)
    }
}

fn strip_question_label(line: &str) -> Option<&str> {
    let rest = line.strip_prefix('Q')?;
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_digit());
    let rest = rest.strip_prefix(':').or_else(|| rest.strip_prefix('.'))?;
    Some(rest.trim())
}

fn option_line(line: &str) -> Option<(char, &str)> {
    let line = line.strip_prefix('(').unwrap_or(line);
    let mut chars = line.chars();
    let letter = chars.next().filter(|c| c.is_ascii_uppercase())?;
    let rest = chars.as_str();
    let rest = rest.strip_prefix(')').or_else(|| rest.strip_prefix('.'))?;
    rest.starts_with(char::is_whitespace).then(|| (letter, rest.trim()))
}

fn labelled<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let (head, rest) = line.split_once(':')?;
    head.trim().eq_ignore_ascii_case(label).then(|| rest.trim())
}

#[derive(Default)]
struct Block {
    question: String,
    options: BTreeMap<char, String>,
    answer: Option<char>,
    topics: Vec<String>,
    problem: Option<String>,
}

impl Block {
    fn finish(self, block: usize) -> Result<ParsedMcq, McqParseError> {
        let err = |reason: String| McqParseError { block, reason };
        if let Some(reason) = self.problem {
            return Err(err(reason));
        }
        if self.question.is_empty() {
            return Err(err("empty question".into()));
        }
        if !self.options.keys().copied().eq(BENCH_LETTERS) {
            return Err(err(format!(
                "options {:?}, expected exactly A-D",
                self.options.keys().collect::<String>()
            )));
        }
        let answer = self.answer.ok_or_else(|| err("missing answer line".into()))?;
        if !self.options.contains_key(&answer) {
            return Err(err(format!("answer {answer} is not an option")));
        }
        if self.topics.is_empty() {
            return Err(err("missing topics line".into()));
        }
        Ok(ParsedMcq {
            question: self.question,
            options: self.options,
            answer,
            topics: self.topics,
        })
    }

    fn flag(&mut self, reason: String) {
        self.problem.get_or_insert(reason);
    }
}

/// Splits generator output into question blocks introduced by `Q<n>:` lines
/// and parses each strictly. Text before the first block is ignored.
pub fn parse_mcqs(text: &str) -> Vec<Result<ParsedMcq, McqParseError>> {
    let mut out = Vec::new();
    let mut cur: Option<Block> = None;
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(q) = strip_question_label(line) {
            if let Some(done) = cur.take() {
                out.push(done.finish(out.len() + 1));
            }
            cur = Some(Block {
                question: q.to_string(),
                ..Block::default()
            });
            continue;
        }
        let Some(b) = cur.as_mut() else {
            continue;
        };
        if let Some((letter, text)) = option_line(line) {
            if b.options.insert(letter, text.to_string()).is_some() {
                b.flag(format!("option {letter} repeated"));
            }
        } else if let Some(a) = labelled(line, "answer") {
            let mut cs = a.trim_matches(|c: char| c == '(' || c == ')' || c == '.').chars();
            match (cs.next(), cs.next()) {
                (Some(l), None) if l.is_ascii_uppercase() => b.answer = Some(l),
                _ => b.flag(format!("unparseable answer `{a}`")),
            }
        } else if let Some(t) = labelled(line, "topics") {
            b.topics
                .extend(t.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string));
        } else {
            b.flag(format!("unexpected line `{line}`"));
        }
    }
    if let Some(done) = cur {
        out.push(done.finish(out.len() + 1));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "Q1: Where is the subject placed?\nA) Dead centre\nB) On the left third\nC) Top edge\nD) Cropped out\nAnswer: B\nTopics: Composition\n";

    #[test]
    fn parses_a_well_formed_block() {
        let parsed = parse_mcqs(GOOD);
        assert_eq!(parsed.len(), 1);
        let p = parsed[0].as_ref().unwrap();
        assert_eq!(p.answer, 'B');
        assert_eq!(p.options[&'C'], "Top edge");
        assert_eq!(p.topics, vec!["Composition"]);
    }

    #[test]
    fn rejects_structural_problems() {
        let three = GOOD.replace("D) Cropped out\n", "");
        assert!(parse_mcqs(&three)[0].is_err());
        let bad_key = GOOD.replace("Answer: B", "Answer: E");
        assert!(parse_mcqs(&bad_key)[0].is_err());
        let no_topics = GOOD.replace("Topics: Composition\n", "");
        assert!(parse_mcqs(&no_topics)[0].is_err());
        let chatter = GOOD.replace("Answer: B", "I like it\nAnswer: B");
        assert!(parse_mcqs(&chatter)[0].is_err());
        let two = format!("Sure, here you go.\n{GOOD}\n{}", GOOD.replace("Q1", "Q2"));
        assert_eq!(parse_mcqs(&two).iter().filter(|r| r.is_ok()).count(), 2);
    }

    #[test]
    fn option_maps_serialize_with_letter_keys() {
        let item = McqItem {
            id: "x-q1".into(),
            image_id: "x".into(),
            image_path: None,
            question: "q".into(),
            options: BENCH_LETTERS.iter().map(|&l| (l, format!("opt {l}"))).collect(),
            answer: 'C',
            topics: vec!["Lighting".into()],
            scores: None,
            filter_log: vec![],
        };
        let json = serde_json::to_string(&item).unwrap();
        assert!(json.contains(r#""options":{"A":"opt A","B":"opt B","C":"opt C","D":"opt D"},"answer":"C""#));
        let back: McqItem = serde_json::from_str(&json).unwrap();
        assert_eq!(back, item);
        back.validate_bench().unwrap();
        let mut gap = item.clone();
        gap.options.remove(&'B');
        assert!(gap.validate().is_err());
    }
}
