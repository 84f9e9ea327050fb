//! Run manifests written beside every command's outputs.

use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// The fully resolved settings of the command.
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    /// `ok` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Output files relative to the run directory, in write order.
    pub outputs: Vec<String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Bookkeeping for one command invocation.
#[derive(Debug)]
pub struct Run {
    pub subcommand: String,
    pub out: PathBuf,
    config: Value,
    seed: Option<u64>,
    started_at: String,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(subcommand: &str, out: &Path) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            out: out.to_path_buf(),
            config: Value::Null,
            seed: None,
            started_at: now(),
            outputs: Vec::new(),
        }
    }

    pub fn set_config<T: Serialize>(&mut self, config: &T, seed: Option<u64>) {
        self.config = serde_json::to_value(config).expect("settings serialize");
        self.seed = seed;
    }

    /// Creates the run directory.
    pub fn prepare(&self) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.out)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Records an output written under the run directory.
    pub fn wrote(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    /// Writes `bytes` atomically to `name` inside the run directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        mvf_pipeline::jsonl::write_atomic(&path, bytes)?;
        self.wrote(name);
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn manifest(&self, error: Option<String>) -> RunManifest {
        RunManifest {
            subcommand: self.subcommand.clone(),
            config: self.config.clone(),
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started_at.clone(),
            finished_at: now(),
            status: if error.is_none() { "ok" } else { "failed" }.to_string(),
            error,
            outputs: self.outputs.clone(),
        }
    }

    pub fn finish(&self, error: Option<String>) -> anyhow::Result<PathBuf> {
        self.prepare()?;
        let path = self.path(MANIFEST_FILE);
        let mut bytes = serde_json::to_vec_pretty(&self.manifest(error))?;
        bytes.push(b'\n');
        mvf_pipeline::jsonl::write_atomic(&path, &bytes)?;
        Ok(path)
    }
}

pub fn read_manifest(path: &Path) -> anyhow::Result<RunManifest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
