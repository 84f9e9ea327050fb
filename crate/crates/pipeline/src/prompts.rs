//! Versioned prompt templates shipped with the crate.
//!
//! Every template starts with a `### task: <id> v<N>` header line and uses
//! `{name}` placeholders. Substitution is single pass, so braces inside the
//! substituted text are never expanded.

use crate::error::{PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Template {
    SummarizeComments,
    IntegrateCritique,
    FilterCritique,
    Conversation,
    FilterPair,
    GenerateMcq,
    BlindAnswer,
    ScoreMcq,
}

impl Template {
    pub const ALL: [Template; 8] = [
        Template::SummarizeComments,
        Template::IntegrateCritique,
        Template::FilterCritique,
        Template::Conversation,
        Template::FilterPair,
        Template::GenerateMcq,
        Template::BlindAnswer,
        Template::ScoreMcq,
    ];

    pub fn text(self) -> &'static str {
        match self {
            Template::SummarizeComments => include_str!("../prompts/summarize_comments.txt"),
            Template::IntegrateCritique => include_str!("../prompts/integrate_critique.txt"),
            Template::FilterCritique => include_str!("../prompts/filter_critique.txt"),
            Template::Conversation => include_str!("../prompts/conversation.txt"),
            Template::FilterPair => include_str!("../prompts/filter_pair.txt"),
            Template::GenerateMcq => include_str!("../prompts/generate_mcq.txt"),
            Template::BlindAnswer => include_str!("../prompts/blind_answer.txt"),
            Template::ScoreMcq => include_str!("../prompts/score_mcq.txt"),
        }
    }

    /// The first line, e.g. `### task: filter-critique v1`.
    pub fn header(self) -> &'static str {
        self.text().lines().next().unwrap_or_default()
    }

    pub fn id(self) -> &'static str {
        self.header()
            .trim_start_matches("### task: ")
            .split_whitespace()
            .next()
            .unwrap_or_default()
    }

    pub fn version(self) -> &'static str {
        self.header().split_whitespace().last().unwrap_or_default()
    }

    /// Recognizes which template produced `prompt` from its header line.
    pub fn of_prompt(prompt: &str) -> Option<Template> {
        let first = prompt.lines().next()?;
        Template::ALL.into_iter().find(|t| t.header() == first)
    }

    pub fn render(self, vars: &[(&str, &str)]) -> Result<String> {
        render(self.text(), vars)
    }
}

pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| PipelineError::InvalidArgument("unclosed placeholder in template".into()))?;
        let name = &after[..close];
        let value = vars
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PipelineError::InvalidArgument(format!("template placeholder `{name}` has no value")))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Extracts the text between the line `{label}:` and the next blank-line
/// separated section. Used by the offline mock model to read prompts.
pub fn section<'a>(prompt: &'a str, label: &str) -> Option<&'a str> {
    let marker = format!("\n{label}:\n");
    let start = prompt.find(&marker)? + marker.len();
    let body = &prompt[start..];
    let end = body.find("\n\n").unwrap_or(body.len());
    Some(body[..end].trim_end())
}
