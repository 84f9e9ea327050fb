//! MCQ evaluation: answer-letter extraction, per-topic accuracy with
//! overlapping topic membership, and markdown/CSV reports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use mvf_core::exec::{self, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::llm::{Gateway, LlmError};
use crate::mcq::McqItem;
use crate::prompts::Template;

/// Report columns in the order used by the reference results table.
pub const TOPIC_COLUMNS: [&str; 11] = [
    "Composition",
    "Equipments",
    "Contrast",
    "Techniques",
    "Color and Tone",
    "Lighting",
    "Exposure",
    "Post-Processing",
    "Aperture and Focus",
    "Storytelling",
    "Sharpness and Clarity",
];
pub const OVERALL: &str = "Overall";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    Letter(char),
    Unparsed,
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::Letter(l) => write!(f, "{l}"),
            Choice::Unparsed => f.write_str("UNPARSED"),
        }
    }
}

fn answer_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i:answer)\s*:\s*\(?([A-Z])\b").expect("valid regex"))
}

fn leading_letter(text: &str) -> Option<char> {
    let t = text.trim();
    let mut cs = t.chars();
    match (cs.next(), cs.next(), cs.next()) {
        (Some(l), None, _) if l.is_ascii_uppercase() => Some(l),
        (Some(l), Some('.' | ')'), _) if l.is_ascii_uppercase() => Some(l),
        (Some('('), Some(l), Some(')')) if l.is_ascii_uppercase() => Some(l),
        _ => None,
    }
}

/// Maps a free-form response to an option letter.
///
/// Precedence: (1) the response starts with `A.`, `A)` or `(A)`, or is the
/// bare letter `A`; (2) `Answer: A` appears anywhere, first occurrence
/// wins; (3) exactly one option's full text occurs in the response,
/// ignoring case. Letters must name an existing option.
pub fn extract_choice(text: &str, options: &BTreeMap<char, String>) -> Choice {
    if let Some(l) = leading_letter(text).filter(|l| options.contains_key(l)) {
        return Choice::Letter(l);
    }
    if let Some(l) = answer_pattern()
        .captures_iter(text)
        .filter_map(|c| c[1].chars().next())
        .find(|l| options.contains_key(l))
    {
        return Choice::Letter(l);
    }
    let lower = text.to_lowercase();
    let mut hits = options
        .iter()
        .filter(|(_, o)| !o.trim().is_empty() && lower.contains(&o.trim().to_lowercase()))
        .map(|(l, _)| *l);
    match (hits.next(), hits.next()) {
        (Some(l), None) => Choice::Letter(l),
        _ => Choice::Unparsed,
    }
}

/// What a model sees for one item.
#[derive(Clone, Copy, Debug)]
pub struct EvalQuery<'a> {
    pub id: &'a str,
    pub image: Option<&'a str>,
    pub question: &'a str,
    pub options: &'a BTreeMap<char, String>,
}

pub trait ModelClient: Send + Sync {
    fn name(&self) -> &str;

    /// Clients that look at the image need its file to exist; items whose
    /// image is missing are skipped for them.
    fn requires_image(&self) -> bool {
        false
    }

    fn answer(&self, query: &EvalQuery<'_>) -> Result<String, LlmError>;
}

/// Always answers the key.
pub struct OracleClient {
    keys: HashMap<String, char>,
}

impl OracleClient {
    pub fn new(items: &[McqItem]) -> Self {
        Self {
            keys: items.iter().map(|i| (i.id.clone(), i.answer)).collect(),
        }
    }
}

impl ModelClient for OracleClient {
    fn name(&self) -> &str {
        "mock-oracle"
    }

    fn answer(&self, q: &EvalQuery<'_>) -> Result<String, LlmError> {
        self.keys
            .get(q.id)
            .map(|l| format!("{l}"))
            .ok_or_else(|| LlmError::InvalidRequest(format!("oracle has no key for {}", q.id)))
    }
}

/// Always answers the option after the key, cyclically.
pub struct AntiOracleClient {
    keys: HashMap<String, char>,
}

impl AntiOracleClient {
    pub fn new(items: &[McqItem]) -> Self {
        Self {
            keys: items.iter().map(|i| (i.id.clone(), i.answer)).collect(),
        }
    }
}

impl ModelClient for AntiOracleClient {
    fn name(&self) -> &str {
        "mock-anti-oracle"
    }

    fn answer(&self, q: &EvalQuery<'_>) -> Result<String, LlmError> {
        let key = *self
            .keys
            .get(q.id)
            .ok_or_else(|| LlmError::InvalidRequest(format!("anti-oracle has no key for {}", q.id)))?;
        let letters: Vec<char> = q.options.keys().copied().collect();
        let pos = letters.iter().position(|&l| l == key).unwrap_or(0);
        Ok(format!("{}", letters[(pos + 1) % letters.len()]))
    }
}

/// Picks an option uniformly at random from a stream seeded by the run
/// seed and the item id, so answers do not depend on evaluation order.
pub struct UniformRandomClient {
    seed: u64,
}

impl UniformRandomClient {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl ModelClient for UniformRandomClient {
    fn name(&self) -> &str {
        "mock-random"
    }

    fn answer(&self, q: &EvalQuery<'_>) -> Result<String, LlmError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(q.id));
        let letters: Vec<char> = q.options.keys().copied().collect();
        Ok(format!("{}", letters[rng.random_range(0..letters.len())]))
    }
}

/// A text-only model reached through an LLM gateway.
pub struct GatewayModelClient {
    gateway: Gateway,
    name: String,
}

impl GatewayModelClient {
    pub fn new(gateway: Gateway) -> Self {
        let name = format!("{}:{}", gateway.client_name(), gateway.model_tag());
        Self { gateway, name }
    }
}

impl ModelClient for GatewayModelClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn answer(&self, q: &EvalQuery<'_>) -> Result<String, LlmError> {
        let options = q
            .options
            .iter()
            .map(|(l, t)| format!("{l}) {t}"))
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = Template::BlindAnswer
            .render(&[("question", q.question), ("options", &options)])
            .map_err(|e| LlmError::InvalidRequest(e.to_string()))?;
        self.gateway.ask(&prompt)
    }
}

/// Maps raw item topics to report categories, ignoring case. Unmapped
/// topics keep their own name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicMergeMap {
    map: BTreeMap<String, String>,
}

impl TopicMergeMap {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        Self {
            map: pairs
                .into_iter()
                .map(|(k, v)| (k.as_ref().trim().to_lowercase(), v.into()))
                .collect(),
        }
    }

    /// Every report column maps to itself, plus common synonyms.
    pub fn default_columns() -> Self {
        let mut pairs: Vec<(String, String)> = TOPIC_COLUMNS.iter().map(|c| (c.to_string(), c.to_string())).collect();
        let synonyms = [
            ("framing", "Composition"),
            ("equipment", "Equipments"),
            ("gear", "Equipments"),
            ("lens", "Equipments"),
            ("camera", "Equipments"),
            ("technique", "Techniques"),
            ("color", "Color and Tone"),
            ("colour", "Color and Tone"),
            ("tone", "Color and Tone"),
            ("light", "Lighting"),
            ("editing", "Post-Processing"),
            ("post processing", "Post-Processing"),
            ("aperture", "Aperture and Focus"),
            ("focus", "Aperture and Focus"),
            ("depth of field", "Aperture and Focus"),
            ("narrative", "Storytelling"),
            ("emotion", "Storytelling"),
            ("story", "Storytelling"),
            ("sharpness", "Sharpness and Clarity"),
            ("clarity", "Sharpness and Clarity"),
        ];
        pairs.extend(synonyms.iter().map(|(a, b)| (a.to_string(), b.to_string())));
        Self::from_pairs(pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let map: BTreeMap<String, String> = serde_json::from_slice(&std::fs::read(path)?)?;
        Ok(Self::from_pairs(map))
    }

    pub fn category(&self, topic: &str) -> String {
        let t = topic.trim();
        self.map.get(&t.to_lowercase()).cloned().unwrap_or_else(|| t.to_string())
    }

    /// Distinct categories of an item's topics.
    pub fn categories(&self, topics: &[String]) -> BTreeSet<String> {
        topics
            .iter()
            .filter(|t| !t.trim().is_empty())
            .map(|t| self.category(t))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicScore {
    pub correct: usize,
    pub total: usize,
}

impl TopicScore {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub benchmark: String,
    /// Attempted items; skipped items are excluded.
    pub total: usize,
    pub correct: usize,
    /// Responses without an extractable letter; counted as incorrect.
    pub unparsed: usize,
    pub skipped: usize,
    pub per_topic: BTreeMap<String, TopicScore>,
}

impl EvalReport {
    pub fn overall(&self) -> f64 {
        TopicScore {
            correct: self.correct,
            total: self.total,
        }
        .accuracy()
    }

    pub fn topic(&self, name: &str) -> Option<f64> {
        self.per_topic.get(name).map(TopicScore::accuracy)
    }

    /// Topic columns: reference columns first, then other categories by
    /// name.
    pub fn columns(&self) -> Vec<String> {
        column_order(self.per_topic.keys().map(String::as_str))
    }
}

fn column_order<'a>(present: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let present: BTreeSet<&str> = present.into_iter().collect();
    let mut cols: Vec<String> = TOPIC_COLUMNS
        .iter()
        .filter(|c| present.contains(*c))
        .map(|c| c.to_string())
        .collect();
    cols.extend(
        present
            .iter()
            .filter(|p| !TOPIC_COLUMNS.contains(p))
            .map(|p| p.to_string()),
    );
    cols
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub response: String,
    pub choice: Choice,
    pub answer: char,
    pub correct: bool,
    pub categories: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub items: Vec<ItemResult>,
    pub skipped: Vec<SkippedItem>,
}

enum Scored {
    Done(ItemResult),
    Skipped(SkippedItem),
}

/// Runs `client` over `items`. Every attempted item counts once toward the
/// overall score and once toward each of its distinct merged categories.
pub fn evaluate(
    client: &dyn ModelClient,
    items: &[McqItem],
    merge: &TopicMergeMap,
    benchmark: &str,
    execution: Execution,
) -> Result<EvalOutcome> {
    for item in items {
        item.validate()?;
    }
    let scored = exec::map(execution, items, |item| -> Result<Scored> {
        if client.requires_image() {
            let present = item.image_path.as_deref().is_some_and(|p| Path::new(p).is_file());
            if !present {
                return Ok(Scored::Skipped(SkippedItem {
                    id: item.id.clone(),
                    reason: format!("image file missing: {}", item.image_path.as_deref().unwrap_or("<none>")),
                }));
            }
        }
        let response = client.answer(&EvalQuery {
            id: &item.id,
            image: item.image_path.as_deref(),
            question: &item.question,
            options: &item.options,
        })?;
        let choice = extract_choice(&response, &item.options);
        Ok(Scored::Done(ItemResult {
            id: item.id.clone(),
            correct: choice == Choice::Letter(item.answer),
            choice,
            answer: item.answer,
            response,
            categories: merge.categories(&item.topics).into_iter().collect(),
        }))
    });
    let mut report = EvalReport {
        model: client.name().to_string(),
        benchmark: benchmark.to_string(),
        total: 0,
        correct: 0,
        unparsed: 0,
        skipped: 0,
        per_topic: BTreeMap::new(),
    };
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for s in scored {
        match s? {
            Scored::Skipped(sk) => {
                report.skipped += 1;
                skipped.push(sk);
            }
            Scored::Done(r) => {
                report.total += 1;
                report.correct += r.correct as usize;
                report.unparsed += (r.choice == Choice::Unparsed) as usize;
                for c in &r.categories {
                    let t = report.per_topic.entry(c.clone()).or_default();
                    t.total += 1;
                    t.correct += r.correct as usize;
                }
                results.push(r);
            }
        }
    }
    Ok(EvalOutcome {
        report,
        items: results,
        skipped,
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// One markdown table over several reports; columns are the union of their
/// categories in the fixed order, followed by `Overall`.
pub fn render_markdown(reports: &[EvalReport]) -> String {
    let cols = column_order(reports.iter().flat_map(|r| r.per_topic.keys().map(String::as_str)));
    let mut out = String::new();
    out.push_str("| Model |");
    for c in cols.iter().map(String::as_str).chain([OVERALL]) {
        out.push_str(&format!(" {c} |"));
    }
    out.push_str("\n| --- |");
    out.push_str(&" ---: |".repeat(cols.len() + 1));
    out.push('\n');
    for r in reports {
        out.push_str(&format!("| {} |", r.model));
        for c in &cols {
            let cell = r.topic(c).map_or_else(|| "-".to_string(), pct);
            out.push_str(&format!(" {cell} |"));
        }
        out.push_str(&format!(" {} |\n", pct(r.overall())));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{} on {}: {} attempted, {} correct, {} unparsed, {} skipped.\n",
            r.model, r.benchmark, r.total, r.correct, r.unparsed, r.skipped
        ));
    }
    out
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Markdown => Ok(render_markdown(std::slice::from_ref(report))),
        ReportFormat::Csv => render_csv(report),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

const CSV_HEADER: [&str; 8] = ["model", "benchmark", "category", "correct", "total", "accuracy", "unparsed", "skipped"];

/// One row per category in column order, then an `Overall` row carrying
/// the unparsed and skipped counts.
pub fn render_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for c in report.columns() {
        let t = report.per_topic[&c];
        w.write_record([
            report.model.as_str(),
            &report.benchmark,
            &c,
            &t.correct.to_string(),
            &t.total.to_string(),
            &pct(t.accuracy()),
            "",
            "",
        ])?;
    }
    w.write_record([
        report.model.as_str(),
        &report.benchmark,
        OVERALL,
        &report.correct.to_string(),
        &report.total.to_string(),
        &pct(report.overall()),
        &report.unparsed.to_string(),
        &report.skipped.to_string(),
    ])?;
    let bytes = w.into_inner().map_err(|e| PipelineError::InvalidArgument(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| PipelineError::InvalidArgument(e.to_string()))
}

fn csv_err(message: String) -> PipelineError {
    PipelineError::Parse {
        path: "<report csv>".into(),
        line: 0,
        message,
    }
}

pub fn parse_csv(text: &str) -> Result<EvalReport> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(csv_err(format!("unexpected header {header:?}")));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| csv_err(format!("`{s}`: {e}")));
    let mut report: Option<EvalReport> = None;
    let mut per_topic = BTreeMap::new();
    for row in r.records() {
        let row = row?;
        let (model, bench, cat) = (&row[0], &row[1], &row[2]);
        let score = TopicScore {
            correct: num(&row[3])?,
            total: num(&row[4])?,
        };
        if cat == OVERALL {
            report = Some(EvalReport {
                model: model.to_string(),
                benchmark: bench.to_string(),
                total: score.total,
                correct: score.correct,
                unparsed: num(&row[6])?,
                skipped: num(&row[7])?,
                per_topic: BTreeMap::new(),
            });
        } else if per_topic.insert(cat.to_string(), score).is_some() {
            return Err(csv_err(format!("category {cat} repeated")));
        }
    }
    let mut report = report.ok_or_else(|| csv_err("missing Overall row".into()))?;
    report.per_topic = per_topic;
    Ok(report)
}
