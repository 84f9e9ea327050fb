//! Command-line surface. Every settings flag is optional so that unset
//! flags fall through to the config file and then to built-in defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use mvf_core::train::OptimizerKind;
use mvf_pipeline::critique::Aspect;

use crate::commands::eval::ModelKind;
use crate::commands::llm::Backend;
use crate::commands::pipeline::StatsKind;
use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "mvf", version, about = "Multi-view fusion experiments, critique pipelines and MCQ evaluation")]
pub struct Cli {
    /// Emit line-delimited JSON logs on stderr.
    #[arg(long, global = true)]
    pub verbose: bool,
    /// TOML config file, or a run manifest to replay.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a fusor and the no-fusor baseline on the synthetic routing task.
    TrainToy(TrainToyArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Aggregate gate weights and forced-gate accuracy of a trained model.
    InspectGates(InspectGatesArgs),
    /// Discriminability of each encoder view over a brightness ladder.
    Discrim(DiscrimArgs),
    /// Critique corpus construction and statistics.
    #[command(subcommand)]
    Critique(CritiqueCommand),
    /// Benchmark construction.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// MCQ evaluation.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Merge several eval reports into one table.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum CritiqueCommand {
    /// Distill comment threads into critiques, conversations and MCQs.
    Build(CritiqueBuildArgs),
    /// Length and category statistics of a built corpus.
    Stats(CritiqueStatsArgs),
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Generate, filter, score and select benchmark MCQs.
    Build(BenchBuildArgs),
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Score a model on an MCQ JSONL file.
    Run(EvalRunArgs),
}

impl Command {
    /// Name as typed on the command line, e.g. `critique build`.
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainToy(_) => "train-toy",
            Command::Gradcheck(_) => "gradcheck",
            Command::InspectGates(_) => "inspect-gates",
            Command::Discrim(_) => "discrim",
            Command::Critique(CritiqueCommand::Build(_)) => "critique build",
            Command::Critique(CritiqueCommand::Stats(_)) => "critique stats",
            Command::Bench(BenchCommand::Build(_)) => "bench build",
            Command::Eval(EvalCommand::Run(_)) => "eval run",
            Command::Report(_) => "report",
        }
    }

    pub fn out(&self) -> Option<&PathBuf> {
        match self {
            Command::TrainToy(a) => a.out.out.as_ref(),
            Command::Gradcheck(a) => a.out.out.as_ref(),
            Command::InspectGates(a) => a.out.out.as_ref(),
            Command::Discrim(a) => a.out.out.as_ref(),
            Command::Critique(CritiqueCommand::Build(a)) => a.out.out.as_ref(),
            Command::Critique(CritiqueCommand::Stats(a)) => a.out.out.as_ref(),
            Command::Bench(BenchCommand::Build(a)) => a.out.out.as_ref(),
            Command::Eval(EvalCommand::Run(a)) => a.out.out.as_ref(),
            Command::Report(a) => a.out.out.as_ref(),
        }
    }
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Run directory for outputs and the run manifest [default: runs/<command>].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub test_samples_per_class: Option<usize>,
    #[arg(long)]
    pub test_seed: Option<u64>,
    /// Skip training the no-fusor baseline.
    #[arg(long)]
    pub no_baseline: bool,
    /// Number of fusion layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Size of the learnable query bank.
    #[arg(long)]
    pub queries: Option<usize>,
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown optimizer `{s}` (adam or sgd)"))
}

fn parse_aspect(s: &str) -> Result<Aspect, String> {
    s.parse().map_err(|e| format!("{e}"))
}

impl TrainToyArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides::new()
            .set("seed", self.seed)
            .set("steps", self.steps)
            .set("lr", self.lr)
            .set("batch_size", self.batch_size)
            .set("optimizer", self.optimizer)
            .set("samples_per_class", self.samples_per_class)
            .set("data_seed", self.data_seed)
            .set("test_samples_per_class", self.test_samples_per_class)
            .set("test_seed", self.test_seed)
            .switch("baseline", self.no_baseline, false)
            .set("model.num_layers", self.layers)
            .set("model.num_queries", self.queries)
    }
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest accepted relative error.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

impl GradcheckArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides::new().set("seed", self.seed).set("tolerance", self.tolerance)
    }
}

#[derive(Debug, Args)]
pub struct InspectGatesArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Checkpoint written by train-toy.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
}

impl InspectGatesArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides::new()
            .set("checkpoint", self.checkpoint.as_ref())
            .set("samples_per_class", self.samples_per_class)
            .set("data_seed", self.data_seed)
    }
}

#[derive(Debug, Args)]
pub struct DiscrimArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Number of ladder steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lo: Option<f64>,
    #[arg(long)]
    pub hi: Option<f64>,
    /// Image side length in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Encoder views to compare.
    #[arg(long, value_delimiter = ',')]
    pub encoders: Option<Vec<String>>,
}

impl DiscrimArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides::new()
            .set("steps", self.steps)
            .set("lo", self.lo)
            .set("hi", self.hi)
            .set("size", self.size)
            .set("encoders", self.encoders.as_ref())
    }
}

#[derive(Debug, Args)]
pub struct LlmArgs {
    /// LLM backend.
    #[arg(long, value_enum)]
    pub llm: Option<Backend>,
    /// Response cache directory [default: <out>/llm_cache].
    #[arg(long, value_name = "DIR")]
    pub cache: Option<PathBuf>,
    /// Maximum concurrent LLM requests.
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
}

impl LlmArgs {
    fn apply(&self, o: Overrides) -> Overrides {
        o.set("llm.backend", self.llm)
            .set("llm.cache_dir", self.cache.as_ref())
            .set("llm.parallelism", self.parallelism)
            .set("llm.max_attempts", self.max_attempts)
    }
}

#[derive(Debug, Args)]
pub struct CritiqueBuildArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// comments.jsonl, one comment thread per line.
    #[arg(long, value_name = "FILE")]
    pub comments: Option<PathBuf>,
    /// Aspects to prompt for conversations.
    #[arg(long, value_delimiter = ',', value_parser = parse_aspect)]
    pub aspects: Option<Vec<Aspect>>,
    #[arg(long)]
    pub no_conversations: bool,
    #[arg(long)]
    pub no_vqa: bool,
    #[command(flatten)]
    pub llm: LlmArgs,
}

impl CritiqueBuildArgs {
    pub fn overrides(&self) -> Overrides {
        let o = Overrides::new()
            .set("comments", self.comments.as_ref())
            .set("aspects", self.aspects.as_ref())
            .switch("conversations", self.no_conversations, false)
            .switch("vqa", self.no_vqa, false);
        self.llm.apply(o)
    }
}

#[derive(Debug, Args)]
pub struct CritiqueStatsArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// critiques.jsonl or qa.jsonl.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<StatsKind>,
}

impl CritiqueStatsArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides::new().set("input", self.input.as_ref()).set("kind", self.kind)
    }
}

#[derive(Debug, Args)]
pub struct BenchBuildArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// critiques.jsonl from critique build.
    #[arg(long, value_name = "FILE")]
    pub critiques: Option<PathBuf>,
    /// Longest accepted critiques to generate from.
    #[arg(long)]
    pub top_critiques: Option<usize>,
    /// MCQs requested per critique.
    #[arg(long)]
    pub per_critique: Option<usize>,
    /// Size of the final selection.
    #[arg(long = "final")]
    pub final_k: Option<usize>,
    #[command(flatten)]
    pub llm: LlmArgs,
}

impl BenchBuildArgs {
    pub fn overrides(&self) -> Overrides {
        let o = Overrides::new()
            .set("critiques", self.critiques.as_ref())
            .set("top_critiques", self.top_critiques)
            .set("per_critique", self.per_critique)
            .set("final_k", self.final_k);
        self.llm.apply(o)
    }
}

#[derive(Debug, Args)]
pub struct EvalRunArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// MCQ JSONL file.
    #[arg(long, value_name = "FILE")]
    pub bench: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Seed for mock-random.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Topic merge map (JSON).
    #[arg(long, value_name = "FILE")]
    pub merge: Option<PathBuf>,
    /// Benchmark name in the report.
    #[arg(long)]
    pub benchmark: Option<String>,
    /// Model name in the report.
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub llm: LlmArgs,
}

impl EvalRunArgs {
    pub fn overrides(&self) -> Overrides {
        let o = Overrides::new()
            .set("bench", self.bench.as_ref())
            .set("model", self.model)
            .set("seed", self.seed)
            .set("merge", self.merge.as_ref())
            .set("benchmark", self.benchmark.as_ref())
            .set("name", self.name.as_ref());
        self.llm.apply(o)
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// report.json files to merge.
    #[arg(long, num_args = 1.., value_name = "FILE")]
    pub reports: Option<Vec<PathBuf>>,
}

impl ReportArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides::new().set("reports", self.reports.as_ref())
    }
}
