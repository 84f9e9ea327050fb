//! The `mvf` command-line tool.
//!
//! Each subcommand resolves its settings (flags over config file over
//! defaults), writes its outputs into a run directory and finishes by
//! writing a [`manifest::RunManifest`] there, on success and on failure.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;
use serde::de::DeserializeOwned;
use serde::Serialize;

use mvf_core::Execution;

use crate::cli::{BenchCommand, Cli, Command, CritiqueCommand, EvalCommand};
use crate::commands::{eval, pipeline, toy};
use crate::config::{resolve, section_name, ConfigFile, Overrides};
use crate::error::{diagnostic, exit_code, CliError};
use crate::manifest::Run;

fn init_logging(verbose: bool) {
    if verbose {
        let _ = tracing_subscriber::fmt()
            .json()
            .with_writer(std::io::stderr)
            .with_max_level(tracing::Level::INFO)
            .try_init();
    }
}

fn settings<T: Serialize + DeserializeOwned>(
    run: &mut Run,
    file: &ConfigFile,
    defaults: T,
    flags: Overrides,
    seed: impl Fn(&T) -> Option<u64>,
) -> Result<T, CliError> {
    let s = resolve(&defaults, file, &section_name(&run.subcommand), flags)?;
    run.set_config(&s, seed(&s));
    Ok(s)
}

fn execute(cli: &Cli, file: &ConfigFile, run: &mut Run) -> anyhow::Result<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match &cli.command {
        Command::TrainToy(a) => {
            let s = settings(run, file, toy::TrainToySettings::default(), a.overrides(), |s| Some(s.seed))?;
            run.prepare()?;
            toy::train_toy(&s, run, exec)
        }
        Command::Gradcheck(a) => {
            let s = settings(run, file, toy::GradcheckSettings::default(), a.overrides(), |s| Some(s.seed))?;
            run.prepare()?;
            toy::gradcheck(&s, run)
        }
        Command::InspectGates(a) => {
            let s = settings(run, file, toy::InspectGatesSettings::default(), a.overrides(), |s| {
                Some(s.data_seed)
            })?;
            run.prepare()?;
            toy::inspect_gates(&s, run, exec)
        }
        Command::Discrim(a) => {
            let s = settings(run, file, toy::DiscrimSettings::default(), a.overrides(), |_| None)?;
            run.prepare()?;
            toy::discrim(&s, run)
        }
        Command::Critique(CritiqueCommand::Build(a)) => {
            let s = settings(run, file, pipeline::CritiqueBuildSettings::default(), a.overrides(), |_| None)?;
            run.prepare()?;
            pipeline::critique_build(&s, run, exec)
        }
        Command::Critique(CritiqueCommand::Stats(a)) => {
            let s = settings(run, file, pipeline::CritiqueStatsSettings::default(), a.overrides(), |_| None)?;
            run.prepare()?;
            pipeline::critique_stats(&s, run)
        }
        Command::Bench(BenchCommand::Build(a)) => {
            let s = settings(run, file, pipeline::BenchBuildSettings::default(), a.overrides(), |_| None)?;
            run.prepare()?;
            pipeline::bench_build(&s, run, exec)
        }
        Command::Eval(EvalCommand::Run(a)) => {
            let s = settings(run, file, eval::EvalRunSettings::default(), a.overrides(), |s| Some(s.seed))?;
            run.prepare()?;
            eval::eval_run(&s, run, exec)
        }
        Command::Report(a) => {
            let s = settings(run, file, eval::ReportSettings::default(), a.overrides(), |_| None)?;
            run.prepare()?;
            eval::report(&s, run)
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ConfigFile> {
    let Some(path) = &cli.config else {
        return Ok(ConfigFile::default());
    };
    let file = ConfigFile::load(path)?;
    let own = section_name(cli.command.name());
    let is_manifest = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_manifest && file.sections().all(|s| s != own) {
        let other: Vec<&str> = file.sections().collect();
        return Err(CliError::Config(format!(
            "manifest {} was written by `{}`, not `{}`",
            path.display(),
            other.join(", ").replace('_', " "),
            cli.command.name()
        ))
        .into());
    }
    Ok(file)
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    let name = cli.command.name();
    let out = cli
        .command
        .out()
        .cloned()
        .unwrap_or_else(|| PathBuf::from("runs").join(name.replace(' ', "-")));
    let mut run = Run::new(name, &out);
    tracing::info!(command = name, out = %out.display(), "start");
    let result = load_config(&cli).and_then(|file| execute(&cli, &file, &mut run));
    let manifest = run.finish(result.as_ref().err().map(|e| format!("{e:#}")));
    match (result, manifest) {
        (Ok(()), Ok(path)) => {
            tracing::info!(manifest = %path.display(), "done");
            0
        }
        (Ok(()), Err(e)) | (Err(e), _) => {
            let code = exit_code(&e);
            eprintln!("{}", diagnostic(&e, code));
            code
        }
    }
}
