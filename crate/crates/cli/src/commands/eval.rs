//! `eval run` and `report`.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tracing::info;

use mvf_core::Execution;
use mvf_pipeline::eval::{
    evaluate, render_csv, render_markdown, AntiOracleClient, EvalOutcome, EvalReport, GatewayModelClient, ModelClient,
    OracleClient, TopicMergeMap, UniformRandomClient,
};
use mvf_pipeline::jsonl::{read_jsonl, to_jsonl};
use mvf_pipeline::mcq::McqItem;

use super::llm::{Backend, LlmSettings};
use crate::error::CliError;
use crate::manifest::Run;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Always answers the key.
    #[default]
    MockOracle,
    /// Always answers the option after the key.
    MockAntiOracle,
    /// Uniform random letter, seeded per item.
    MockRandom,
    /// The built-in offline LLM answering from the question text alone.
    Mock,
    /// A chat-completion endpoint answering from the question text alone.
    Http,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::MockOracle => "mock-oracle",
            ModelKind::MockAntiOracle => "mock-anti-oracle",
            ModelKind::MockRandom => "mock-random",
            ModelKind::Mock => "mock",
            ModelKind::Http => "http",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRunSettings {
    pub bench: Option<PathBuf>,
    pub model: ModelKind,
    /// Seed of the random mock.
    pub seed: u64,
    /// Topic merge map (JSON object, topic to category); the built-in
    /// column map when unset.
    pub merge: Option<PathBuf>,
    /// Benchmark name in the report; the bench file stem when unset.
    pub benchmark: Option<String>,
    /// Model name in the report; the model kind when unset.
    pub name: Option<String>,
    pub llm: LlmSettings,
}

impl Default for EvalRunSettings {
    fn default() -> Self {
        Self {
            bench: None,
            model: ModelKind::MockOracle,
            seed: 0,
            merge: None,
            benchmark: None,
            name: None,
            llm: LlmSettings::default(),
        }
    }
}

struct Named<C> {
    name: String,
    inner: C,
}

impl<C: ModelClient> ModelClient for Named<C> {
    fn name(&self) -> &str {
        &self.name
    }
    fn requires_image(&self) -> bool {
        self.inner.requires_image()
    }
    fn answer(&self, q: &mvf_pipeline::eval::EvalQuery<'_>) -> Result<String, mvf_pipeline::llm::LlmError> {
        self.inner.answer(q)
    }
}

fn named<C: ModelClient + 'static>(name: &str, inner: C) -> Box<dyn ModelClient> {
    Box::new(Named {
        name: name.to_string(),
        inner,
    })
}

pub fn merge_map(path: Option<&Path>) -> anyhow::Result<TopicMergeMap> {
    match path {
        Some(p) => Ok(TopicMergeMap::load(p).with_context(|| format!("loading merge map {}", p.display()))?),
        None => Ok(TopicMergeMap::default_columns()),
    }
}

/// Evaluates the configured model on the configured bench file.
pub fn run_eval(s: &EvalRunSettings, out: &Path, exec: Execution) -> anyhow::Result<EvalOutcome> {
    let bench = s
        .bench
        .as_ref()
        .ok_or_else(|| CliError::Usage("eval run needs --bench".into()))?;
    let items: Vec<McqItem> = read_jsonl(bench).with_context(|| format!("reading {}", bench.display()))?;
    let merge = merge_map(s.merge.as_deref())?;
    let name = s.name.clone().unwrap_or_else(|| s.model.as_str().to_string());
    let benchmark = s.benchmark.clone().unwrap_or_else(|| {
        bench
            .file_stem()
            .map_or_else(|| "bench".to_string(), |f| f.to_string_lossy().into_owned())
    });
    let client: Box<dyn ModelClient> = match s.model {
        ModelKind::MockOracle => named(&name, OracleClient::new(&items)),
        ModelKind::MockAntiOracle => named(&name, AntiOracleClient::new(&items)),
        ModelKind::MockRandom => named(&name, UniformRandomClient::new(s.seed)),
        ModelKind::Mock | ModelKind::Http => {
            let llm = LlmSettings {
                backend: if s.model == ModelKind::Mock { Backend::Offline } else { Backend::Http },
                ..s.llm.clone()
            };
            named(&name, GatewayModelClient::new(llm.gateway(out)?))
        }
    };
    info!(items = items.len(), model = %name, "evaluating");
    Ok(evaluate(client.as_ref(), &items, &merge, &benchmark, exec)?)
}

pub fn eval_run(s: &EvalRunSettings, run: &mut Run, exec: Execution) -> anyhow::Result<()> {
    let outcome = run_eval(s, &run.out, exec)?;
    let report = &outcome.report;
    run.write_json("report.json", report)?;
    run.write("report.md", render_markdown(std::slice::from_ref(report)).as_bytes())?;
    run.write("report.csv", render_csv(report)?.as_bytes())?;
    run.write("items.jsonl", to_jsonl(&outcome.items)?.as_bytes())?;
    run.write("skipped.jsonl", to_jsonl(&outcome.skipped)?.as_bytes())?;
    println!(
        "{} on {}: overall {:.2} ({} / {}, {} unparsed, {} skipped)",
        report.model,
        report.benchmark,
        100.0 * report.overall(),
        report.correct,
        report.total,
        report.unparsed,
        report.skipped
    );
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSettings {
    /// `report.json` files from `eval run`, one table row each.
    pub reports: Vec<PathBuf>,
}

pub fn load_reports(paths: &[PathBuf]) -> anyhow::Result<Vec<EvalReport>> {
    paths
        .iter()
        .map(|p| -> anyhow::Result<EvalReport> {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("{} is not a report", p.display()))
        })
        .collect()
}

pub fn report(s: &ReportSettings, run: &mut Run) -> anyhow::Result<()> {
    if s.reports.is_empty() {
        return Err(CliError::Usage("report needs at least one --reports file".into()).into());
    }
    let reports = load_reports(&s.reports)?;
    let md = render_markdown(&reports);
    run.write("report.md", md.as_bytes())?;
    let mut csv = String::new();
    for (i, r) in reports.iter().enumerate() {
        let text = render_csv(r)?;
        let skip = usize::from(i > 0);
        for line in text.lines().skip(skip) {
            csv.push_str(line);
            csv.push('\n');
        }
    }
    run.write("report.csv", csv.as_bytes())?;
    print!("{md}");
    Ok(())
}
