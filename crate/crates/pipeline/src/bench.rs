//! Benchmark construction: pick the most detailed critiques, generate MCQs,
//! drop items answerable without the image, score the rest on three axes
//! and keep the top K.

use std::path::Path;

use mvf_core::exec::{self, Execution};
use serde::{Deserialize, Serialize};

use crate::critique::{generate_mcqs, CritiqueRecord, VqaFlag};
use crate::error::{PipelineError, Result};
use crate::eval::{extract_choice, Choice};
use crate::jsonl::{write_atomic, write_jsonl};
use crate::llm::Gateway;
use crate::mcq::{FilterStage, FilterStageResult, McqItem, Scores};
use crate::prompts::Template;

pub const BLIND_CORRECT: &str = "blind_correct";
pub const BLIND_UNPARSEABLE: &str = "blind_answer_unparseable";
pub const SCORE_PARSE: &str = "score_parse";

/// Ranks by word count descending, then image_id ascending, and returns the
/// first `k`.
pub fn select_top_critiques(critiques: &[CritiqueRecord], k: usize) -> Result<Vec<CritiqueRecord>> {
    if k > critiques.len() {
        return Err(PipelineError::InvalidArgument(format!(
            "asked for {k} critiques from a corpus of {}",
            critiques.len()
        )));
    }
    let mut ranked: Vec<&CritiqueRecord> = critiques.iter().collect();
    ranked.sort_by(|a, b| b.word_count().cmp(&a.word_count()).then_with(|| a.image_id.cmp(&b.image_id)));
    Ok(ranked.into_iter().take(k).cloned().collect())
}

/// Shows the filter model only the question and options. An item it
/// answers correctly fails; an unparseable answer passes.
pub fn visual_dependency_filter(item: &McqItem, llm: &Gateway) -> Result<FilterStageResult> {
    let prompt = Template::BlindAnswer.render(&[("question", &item.question), ("options", &item.options_block())])?;
    let reply = llm.ask(&prompt)?;
    let (passed, detail) = match extract_choice(&reply, &item.options) {
        Choice::Letter(l) if l == item.answer => (false, BLIND_CORRECT.to_string()),
        Choice::Letter(l) => (true, format!("blind_wrong:{l}")),
        Choice::Unparsed => (true, BLIND_UNPARSEABLE.to_string()),
    };
    Ok(FilterStageResult {
        stage: FilterStage::VisualDependency,
        passed,
        detail,
    })
}

/// Exactly three comma-separated integers in `1..=10`, nothing else.
pub fn parse_scores(text: &str) -> Option<Scores> {
    let parts: Vec<&str> = text.trim().split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return None;
    }
    let mut v = [0u8; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let n: u8 = p.parse().ok()?;
        if !(1..=10).contains(&n) {
            return None;
        }
        *slot = n;
    }
    Some(Scores {
        relevance: v[0],
        visual_dependency: v[1],
        expertise: v[2],
    })
}

/// Requests relevance, visual-dependency and expertise scores. `None`
/// means the reply was rejected as unparseable.
pub fn score_item(item: &McqItem, llm: &Gateway) -> Result<Option<Scores>> {
    let prompt = Template::ScoreMcq.render(&[
        ("question", &item.question),
        ("options", &item.options_block()),
        ("answer", &item.answer.to_string()),
    ])?;
    Ok(parse_scores(&llm.ask(&prompt)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub rank: usize,
    pub id: String,
    pub image_id: String,
    pub relevance: u8,
    pub visual_dependency: u8,
    pub expertise: u8,
    pub mean: String,
    pub selected: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Selection {
    /// Selected items in rank order, each with a passing top-k log entry.
    pub selected: Vec<McqItem>,
    /// Every scored item in rank order, with its top-k log entry.
    pub ranked: Vec<McqItem>,
    pub audit: Vec<AuditRow>,
    pub warnings: Vec<String>,
}

/// Orders scored items by mean score descending, then expertise
/// descending, then id ascending, and keeps `min(k, pool)`.
pub fn select_final(items: &[McqItem], k: usize) -> Selection {
    let mut warnings = Vec::new();
    let mut scored: Vec<(&McqItem, Scores)> = Vec::new();
    for item in items {
        match item.scores {
            Some(s) => scored.push((item, s)),
            None => warnings.push(format!("item {} has no scores and was not ranked", item.id)),
        }
    }
    if k > scored.len() {
        warnings.push(format!("requested {k} items but only {} are scored; keeping all", scored.len()));
    }
    scored.sort_by(|(a, sa), (b, sb)| {
        sb.sum()
            .cmp(&sa.sum())
            .then_with(|| sb.expertise.cmp(&sa.expertise))
            .then_with(|| a.id.cmp(&b.id))
    });
    let mut sel = Selection {
        warnings,
        ..Selection::default()
    };
    for (rank, (item, s)) in scored.into_iter().enumerate() {
        let selected = rank < k;
        let mut item = item.clone();
        item.filter_log.push(FilterStageResult {
            stage: FilterStage::Topk,
            passed: selected,
            detail: format!("rank {} of cutoff {k}", rank + 1),
        });
        sel.audit.push(AuditRow {
            rank: rank + 1,
            id: item.id.clone(),
            image_id: item.image_id.clone(),
            relevance: s.relevance,
            visual_dependency: s.visual_dependency,
            expertise: s.expertise,
            mean: format!("{:.4}", s.mean()),
            selected,
        });
        if selected {
            sel.selected.push(item.clone());
        }
        sel.ranked.push(item);
    }
    sel
}

pub fn audit_csv(rows: &[AuditRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["rank", "id", "image_id", "relevance", "visual_dependency", "expertise", "mean", "selected"])?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::InvalidArgument(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| PipelineError::InvalidArgument(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub top_critiques: usize,
    pub per_critique: usize,
    pub final_k: usize,
    pub execution: Execution,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            top_critiques: 5000,
            per_critique: crate::critique::MCQS_PER_CRITIQUE,
            final_k: 1500,
            execution: Execution::Parallel,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchCounts {
    pub critiques: usize,
    pub generated: usize,
    pub flagged_critiques: usize,
    pub after_dependency: usize,
    pub scored: usize,
    pub selected: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchBuild {
    /// Every generated item with its filter log, in generation order.
    pub pool: Vec<McqItem>,
    pub selection: Selection,
    pub flags: Vec<VqaFlag>,
    pub counts: BenchCounts,
}

impl BenchBuild {
    /// Writes bench.jsonl, pool.jsonl, selection_audit.csv and
    /// bench_counts.json.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_jsonl(&dir.join("bench.jsonl"), &self.selection.selected)?;
        write_jsonl(&dir.join("pool.jsonl"), &self.pool)?;
        write_atomic(&dir.join("selection_audit.csv"), audit_csv(&self.selection.audit)?.as_bytes())?;
        write_atomic(&dir.join("bench_counts.json"), &serde_json::to_vec_pretty(&self.counts)?)
    }
}

/// Runs the dependency filter then scoring on one item, appending both
/// outcomes to its log. Scoring only runs on items that passed.
pub fn filter_and_score(item: &McqItem, filter_llm: &Gateway) -> Result<McqItem> {
    let mut item = item.clone();
    let dep = visual_dependency_filter(&item, filter_llm)?;
    let passed = dep.passed;
    item.filter_log.push(dep);
    if !passed {
        return Ok(item);
    }
    let scores = score_item(&item, filter_llm)?;
    item.filter_log.push(FilterStageResult {
        stage: FilterStage::Scoring,
        passed: scores.is_some(),
        detail: scores.map_or_else(|| SCORE_PARSE.to_string(), |s| format!("mean {:.4}", s.mean())),
    });
    item.scores = scores;
    Ok(item)
}

/// Generation, dependency filter, scoring and top-K selection over the
/// accepted critiques.
pub fn build_bench(critiques: &[CritiqueRecord], gen_llm: &Gateway, filter_llm: &Gateway, cfg: &BenchConfig) -> Result<BenchBuild> {
    let accepted: Vec<CritiqueRecord> = critiques.iter().filter(|c| c.accepted).cloned().collect();
    let top = select_top_critiques(&accepted, cfg.top_critiques.min(accepted.len()))?;
    let generated = exec::map(cfg.execution, &top, |c| generate_mcqs(c, gen_llm, cfg.per_critique));
    let mut fresh = Vec::new();
    let mut flags = Vec::new();
    for g in generated {
        match g? {
            Ok(items) => fresh.extend(items),
            Err(flag) => flags.push(flag),
        }
    }
    for item in &fresh {
        item.validate_bench()?;
    }
    let pool = exec::map(cfg.execution, &fresh, |item| filter_and_score(item, filter_llm))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let survivors: Vec<McqItem> = pool
        .iter()
        .filter(|i| i.filter_log.first().is_some_and(|r| r.passed))
        .cloned()
        .collect();
    let selection = select_final(&survivors, cfg.final_k);
    let counts = BenchCounts {
        critiques: top.len(),
        generated: pool.len(),
        flagged_critiques: flags.len(),
        after_dependency: survivors.len(),
        scored: pool.iter().filter(|i| i.scores.is_some()).count(),
        selected: selection.selected.len(),
    };
    Ok(BenchBuild {
        pool,
        selection,
        flags,
        counts,
    })
}
