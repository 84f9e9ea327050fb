//! A deterministic offline model that answers every shipped prompt template
//! with simple text heuristics. It lets whole pipelines run without network
//! access. Replies are pure functions of the prompt.

use sha2::{Digest, Sha256};

use crate::llm::{LlmClient, LlmError, LlmRequest};
use crate::prompts::{section, Template};

const AESTHETIC_TERMS: [&str; 30] = [
    "light", "shadow", "highlight", "composition", "frame", "framing", "crop", "color", "colour", "tone",
    "contrast", "exposure", "focus", "sharp", "blur", "bokeh", "depth", "background", "foreground", "mood",
    "story", "saturation", "edit", "processing", "texture", "warm", "cool", "balance", "lens", "aperture",
];

fn aspect_terms(aspect: &str) -> &'static [&'static str] {
    match aspect {
        "lighting" => &["light", "shadow", "highlight", "exposure", "backlit", "sun"],
        "composition" => &["composition", "frame", "framing", "crop", "centre", "center", "third", "placement", "background", "foreground"],
        "color" => &["color", "colour", "tone", "saturation", "hue", "warm", "cool"],
        "emotion" => &["mood", "feel", "emotion", "calm", "joy", "melancholy"],
        "narrative" => &["story", "narrative", "moment", "subject"],
        "technique" => &["focus", "sharp", "aperture", "depth", "bokeh", "lens", "shutter", "macro"],
        "post-processing" => &["edit", "processing", "processed", "vignette", "hdr", "retouch", "sharpening"],
        _ => &[],
    }
}

fn topic_of(sentence: &str) -> &'static str {
    let s = sentence.to_lowercase();
    let table: [(&[&str], &str); 8] = [
        (&["edit", "processing", "processed", "vignette", "retouch"], "Post-Processing"),
        (&["exposure", "overexposed", "underexposed"], "Exposure"),
        (&["focus", "aperture", "depth", "bokeh"], "Aperture and Focus"),
        (&["sharp", "blur", "clarity", "noise"], "Sharpness and Clarity"),
        (&["light", "shadow", "highlight"], "Lighting"),
        (&["color", "colour", "tone", "saturation"], "Color and Tone"),
        (&["contrast"], "Contrast"),
        (&["story", "mood", "moment", "emotion"], "Storytelling"),
    ];
    table
        .iter()
        .find(|(terms, _)| terms.iter().any(|t| s.contains(t)))
        .map_or("Composition", |(_, topic)| topic)
}

fn digest(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        cur.push(ch);
        if matches!(ch, '.' | '!' | '?') {
            let s = cur.split_whitespace().collect::<Vec<_>>().join(" ");
            if s.split_whitespace().count() >= 3 {
                out.push(s);
            }
            cur.clear();
        }
    }
    let s = cur.split_whitespace().collect::<Vec<_>>().join(" ");
    if s.split_whitespace().count() >= 3 {
        out.push(format!("{s}."));
    }
    out
}

fn strip_number(line: &str) -> &str {
    let t = line.trim_start_matches(|c: char| c.is_ascii_digit());
    t.strip_prefix(". ").unwrap_or(t).trim()
}

fn mentions(text: &str, terms: &[&str]) -> usize {
    let lower = text.to_lowercase();
    terms.iter().filter(|t| lower.contains(*t)).count()
}

fn letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

#[derive(Clone, Debug, Default)]
pub struct OfflineModel;

impl OfflineModel {
    pub fn new() -> Self {
        Self
    }

    fn summarize(prompt: &str) -> String {
        let comments = section(prompt, "Comments").unwrap_or_default();
        comments
            .lines()
            .filter_map(|l| sentences(strip_number(l)).into_iter().next())
            .map(|s| format!("- {s}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn integrate(prompt: &str) -> String {
        let summary = section(prompt, "Summary").unwrap_or_default();
        let points: Vec<&str> = summary
            .lines()
            .filter_map(|l| l.trim().strip_prefix("- "))
            .collect();
        if points.is_empty() {
            return String::new();
        }
        let mut out = String::from("Viewers of this photo observed the following.");
        for p in points {
            out.push(' ');
            out.push_str(p);
        }
        out
    }

    fn verdict(text: &str, min_words: usize, min_terms: usize) -> String {
        let ok = text.split_whitespace().count() >= min_words && mentions(text, &AESTHETIC_TERMS) >= min_terms;
        if ok { "YES" } else { "NO" }.to_string()
    }

    fn conversation(prompt: &str) -> String {
        let aspect = prompt
            .lines()
            .nth(1)
            .and_then(|l| l.split("photo's ").nth(1))
            .map(|a| a.trim_end_matches('.'))
            .unwrap_or_default();
        let critique = section(prompt, "Critique").unwrap_or_default();
        let terms = aspect_terms(aspect);
        let pairs: Vec<String> = sentences(critique)
            .into_iter()
            .filter(|s| mentions(s, terms) > 0)
            .enumerate()
            .map(|(i, s)| format!("Q: What is observation {} about the {aspect} of this photo?\nA: {s}", i + 1))
            .collect();
        if pairs.is_empty() {
            "NONE".to_string()
        } else {
            pairs.join("\n")
        }
    }

    fn mcqs(prompt: &str) -> String {
        let count: usize = prompt
            .lines()
            .find_map(|l| l.split("write exactly ").nth(1))
            .and_then(|r| r.split_whitespace().next())
            .and_then(|n| n.parse().ok())
            .unwrap_or(5);
        let critique = section(prompt, "Critique").unwrap_or_default();
        let ss = sentences(critique);
        if ss.is_empty() {
            return "NONE".to_string();
        }
        let distractors = [
            "The photo has no discernible subject.",
            "The image is a black and white long exposure.",
            "The frame is badly tilted and out of focus throughout.",
            "The colors are heavily oversaturated with neon tones.",
            "The scene was shot at night under street lamps.",
        ];
        let mut out = Vec::new();
        for i in 0..count {
            let truth = &ss[i % ss.len()];
            let key = (digest(&[critique, &i.to_string()]) % 4) as usize;
            let mut block = format!("Q{}: Which observation {} is supported by viewers of this photo?", i + 1, i + 1);
            let mut d = (i..).map(|j| distractors[j % distractors.len()]);
            for slot in 0..4 {
                let text = if slot == key { truth.as_str() } else { d.next().unwrap_or_default() };
                block.push_str(&format!("\n{}) {text}", letter(slot)));
            }
            block.push_str(&format!("\nAnswer: {}\nTopics: {}", letter(key), topic_of(truth)));
            out.push(block);
        }
        out.join("\n\n")
    }

    fn option_count(prompt: &str) -> usize {
        prompt
            .lines()
            .filter(|l| {
                let mut c = l.chars();
                matches!((c.next(), c.next()), (Some(l), Some(')')) if l.is_ascii_uppercase())
            })
            .count()
    }

    fn blind(prompt: &str) -> String {
        let n = Self::option_count(prompt).max(1);
        letter((digest(&[prompt]) % n as u64) as usize).to_string()
    }

    fn score(prompt: &str) -> String {
        let h = digest(&[prompt]);
        let axis = |shift: u32| 4 + ((h >> shift) % 7) as u8;
        format!("{}, {}, {}", axis(0), axis(16), axis(32))
    }
}

impl LlmClient for OfflineModel {
    fn name(&self) -> &str {
        "offline"
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        let p = &req.prompt;
        match Template::of_prompt(p) {
            Some(Template::SummarizeComments) => Ok(Self::summarize(p)),
            Some(Template::IntegrateCritique) => Ok(Self::integrate(p)),
            Some(Template::FilterCritique) => Ok(Self::verdict(section(p, "Critique").unwrap_or_default(), 15, 2)),
            Some(Template::FilterPair) => {
                let answer = p.lines().find_map(|l| l.strip_prefix("A: ")).unwrap_or_default();
                Ok(Self::verdict(answer, 6, 1))
            }
            Some(Template::Conversation) => Ok(Self::conversation(p)),
            Some(Template::GenerateMcq) => Ok(Self::mcqs(p)),
            Some(Template::BlindAnswer) => Ok(Self::blind(p)),
            Some(Template::ScoreMcq) => Ok(Self::score(p)),
            None => Err(LlmError::InvalidRequest("the offline model only answers shipped prompt templates".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::parse_scores;
    use crate::mcq::parse_mcqs;

    #[test]
    fn sentence_splitting() {
        assert_eq!(
            sentences("Lovely soft light here. Nice! The crop is tight and balanced"),
            vec!["Lovely soft light here.", "The crop is tight and balanced."]
        );
    }

    #[test]
    fn generated_mcqs_parse() {
        let p = Template::GenerateMcq
            .render(&[("count", "5"), ("critique", "The light is soft. The crop is tight. Colors are muted.")])
            .unwrap();
        let text = OfflineModel.complete(&LlmRequest::new("large", p)).unwrap();
        let parsed = parse_mcqs(&text);
        assert_eq!(parsed.len(), 5);
        assert!(parsed.iter().all(|r| r.is_ok()), "{text}");
    }

    #[test]
    fn scores_are_in_range() {
        for q in ["a", "b", "c", "d"] {
            let p = Template::ScoreMcq.render(&[("question", q), ("options", "A) x"), ("answer", "A")]).unwrap();
            assert!(parse_scores(&OfflineModel.complete(&LlmRequest::new("small", p)).unwrap()).is_some());
        }
    }

    #[test]
    fn unknown_prompts_are_refused() {
        assert!(OfflineModel.complete(&LlmRequest::new("large", "hello")).is_err());
    }
}
