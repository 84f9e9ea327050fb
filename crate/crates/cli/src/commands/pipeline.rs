//! `critique build`, `critique stats` and `bench build`.

use std::path::PathBuf;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use mvf_core::Execution;
use mvf_pipeline::bench::{build_bench, BenchConfig};
use mvf_pipeline::critique::{build_corpus, Aspect, CommentThread, CorpusConfig, CritiqueRecord, QaPair};
use mvf_pipeline::jsonl::read_jsonl;
use mvf_pipeline::llm::Gateway;
use mvf_pipeline::stats::{corpus_stats, CorpusStats};

use super::llm::LlmSettings;
use crate::error::CliError;
use crate::manifest::Run;
use crate::svg::BarChart;

fn require<'a>(path: &'a Option<PathBuf>, flag: &str, cmd: &str) -> Result<&'a PathBuf, CliError> {
    path.as_ref().ok_or_else(|| CliError::Usage(format!("{cmd} needs {flag}")))
}

fn report_llm(run: &mut Run, gateway: &Gateway) -> anyhow::Result<()> {
    let stats = gateway.stats();
    info!(requests = stats.requests, cache_hits = stats.cache_hits, sent = stats.sent, "llm usage");
    run.write_json("llm_stats.json", &stats)?;
    println!(
        "llm: {} requests, {} cache hits, {} sent",
        stats.requests, stats.cache_hits, stats.sent
    );
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CritiqueBuildSettings {
    pub comments: Option<PathBuf>,
    pub aspects: Vec<Aspect>,
    pub conversations: bool,
    pub vqa: bool,
    pub llm: LlmSettings,
}

impl Default for CritiqueBuildSettings {
    fn default() -> Self {
        let c = CorpusConfig::default();
        Self {
            comments: None,
            aspects: c.aspects,
            conversations: c.conversations,
            vqa: c.vqa,
            llm: LlmSettings::default(),
        }
    }
}

pub fn critique_build(s: &CritiqueBuildSettings, run: &mut Run, exec: Execution) -> anyhow::Result<()> {
    let input = require(&s.comments, "--comments", "critique build")?;
    let threads: Vec<CommentThread> = read_jsonl(input).with_context(|| format!("reading {}", input.display()))?;
    info!(threads = threads.len(), "comment threads loaded");
    let large = s.llm.gateway(&run.out)?;
    let small = large.with_tag(&s.llm.small_tag);
    let cfg = CorpusConfig {
        aspects: s.aspects.clone(),
        conversations: s.conversations,
        vqa: s.vqa,
        execution: exec,
    };
    let build = build_corpus(&threads, &large, &small, &cfg)?;
    build.write(&run.out)?;
    for name in ["critiques.jsonl", "qa.jsonl", "vqa.jsonl", "drops.jsonl"] {
        run.wrote(name);
    }
    let counts = build.counts();
    run.write_json("corpus_counts.json", &counts)?;
    report_llm(run, &large)?;
    println!(
        "threads {} -> critiques {} accepted {}; pairs {} accepted {}; mcqs {} ({} critiques flagged)",
        counts.threads, counts.generated, counts.accepted, counts.pairs, counts.accepted_pairs, counts.mcqs, counts.flagged
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StatsKind {
    /// Accepted records of a critiques.jsonl.
    #[default]
    Critiques,
    /// Accepted pairs of a qa.jsonl.
    Qa,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CritiqueStatsSettings {
    pub input: Option<PathBuf>,
    pub kind: StatsKind,
}

pub fn load_stats(s: &CritiqueStatsSettings) -> anyhow::Result<CorpusStats> {
    let input = require(&s.input, "--input", "critique stats")?;
    let stats = match s.kind {
        StatsKind::Critiques => {
            let recs: Vec<CritiqueRecord> = read_jsonl(input)?;
            let accepted: Vec<CritiqueRecord> = recs.into_iter().filter(|r| r.accepted).collect();
            corpus_stats(&accepted)?
        }
        StatsKind::Qa => {
            let pairs: Vec<QaPair> = read_jsonl(input)?;
            let accepted: Vec<QaPair> = pairs.into_iter().filter(|p| p.accepted).collect();
            corpus_stats(&accepted)?
        }
    };
    Ok(stats)
}

pub fn critique_stats(s: &CritiqueStatsSettings, run: &mut Run) -> anyhow::Result<()> {
    let stats = load_stats(s)?;
    run.write_json("stats.json", &stats)?;
    let lengths = BarChart::single(
        "Length distribution",
        "items",
        stats
            .length_histogram
            .iter()
            .map(|b| (format!("{}-{}", b.lo, b.lo + stats.bucket_width - 1), b.count as f64))
            .collect(),
    );
    run.write("length_histogram.svg", lengths.render().as_bytes())?;
    let cats = BarChart::single(
        "Category distribution",
        "items",
        stats.category_histogram.iter().map(|(k, &v)| (k.clone(), v as f64)).collect(),
    );
    run.write("category_histogram.svg", cats.render().as_bytes())?;
    println!("items {}; mean words {:.2}", stats.count, stats.mean_words);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchBuildSettings {
    pub critiques: Option<PathBuf>,
    pub top_critiques: usize,
    pub per_critique: usize,
    pub final_k: usize,
    pub llm: LlmSettings,
}

impl Default for BenchBuildSettings {
    fn default() -> Self {
        let b = BenchConfig::default();
        Self {
            critiques: None,
            top_critiques: b.top_critiques,
            per_critique: b.per_critique,
            final_k: b.final_k,
            llm: LlmSettings::default(),
        }
    }
}

pub fn bench_build(s: &BenchBuildSettings, run: &mut Run, exec: Execution) -> anyhow::Result<()> {
    let input = require(&s.critiques, "--critiques", "bench build")?;
    let critiques: Vec<CritiqueRecord> = read_jsonl(input).with_context(|| format!("reading {}", input.display()))?;
    let gen = s.llm.gateway(&run.out)?;
    let filter = gen.with_tag(&s.llm.filter_tag);
    let cfg = BenchConfig {
        top_critiques: s.top_critiques,
        per_critique: s.per_critique,
        final_k: s.final_k,
        execution: exec,
    };
    let build = build_bench(&critiques, &gen, &filter, &cfg)?;
    build.write(&run.out)?;
    for name in ["bench.jsonl", "pool.jsonl", "selection_audit.csv", "bench_counts.json"] {
        run.wrote(name);
    }
    for w in &build.selection.warnings {
        warn!(warning = %w, "selection");
        eprintln!("warning: {w}");
    }
    report_llm(run, &gen)?;
    let c = &build.counts;
    println!(
        "critiques {} -> generated {} ({} flagged) -> visual-dependency {} -> scored {} -> selected {}",
        c.critiques, c.generated, c.flagged_critiques, c.after_dependency, c.scored, c.selected
    );
    Ok(())
}
