//! Layered settings: built-in defaults, then the config file, then flags.
//!
//! Every subcommand resolves one settings struct. Layers are merged as JSON
//! values key by key, so a file or flag only needs to name the fields it
//! changes. The merged value is deserialized with unknown fields rejected.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;
use crate::manifest::RunManifest;

/// Shared sections that apply to several subcommands.
pub const SHARED_SECTIONS: [&str; 1] = ["llm"];

pub const COMMAND_SECTIONS: [&str; 9] = [
    "train_toy",
    "gradcheck",
    "inspect_gates",
    "discrim",
    "critique_build",
    "critique_stats",
    "bench_build",
    "eval_run",
    "report",
];

/// A parsed config file: a TOML document, or a run manifest whose config
/// snapshot is replayed as the section of the command that produced it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    root: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            let manifest: RunManifest = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{} is not a run manifest: {e}", path.display())))?;
            let mut root = Map::new();
            root.insert(section_name(&manifest.subcommand), manifest.config);
            return Ok(Self { root });
        }
        Self::parse_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse_toml(text: &str) -> Result<Self, CliError> {
        let value: Value = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let Value::Object(root) = value else {
            return Err(CliError::Config("config root must be a table".into()));
        };
        for (key, v) in &root {
            if !SHARED_SECTIONS.contains(&key.as_str()) && !COMMAND_SECTIONS.contains(&key.as_str()) {
                return Err(CliError::Config(format!("unknown section `{key}`")));
            }
            if !v.is_object() {
                return Err(CliError::Config(format!("`{key}` must be a table")));
            }
        }
        Ok(Self { root })
    }

    pub fn section(&self, name: &str) -> Option<&Value> {
        self.root.get(name)
    }

    /// Section names present in the file.
    pub fn sections(&self) -> impl Iterator<Item = &str> {
        self.root.keys().map(String::as_str)
    }
}

/// `critique build` becomes `critique_build`.
pub fn section_name(subcommand: &str) -> String {
    subcommand.replace([' ', '-'], "_")
}

/// Flag values keyed by dotted field path. Unset flags are skipped.
#[derive(Clone, Debug, Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set<V: Serialize>(mut self, path: &str, value: Option<V>) -> Self {
        if let Some(v) = value {
            let v = serde_json::to_value(v).expect("flag values serialize");
            let mut slot = &mut self.0;
            let mut parts = path.split('.').peekable();
            while let Some(part) = parts.next() {
                if parts.peek().is_none() {
                    slot.insert(part.to_string(), v);
                    break;
                }
                slot = slot
                    .entry(part.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("override paths do not collide");
            }
        }
        self
    }

    /// Sets `path` to `true` when `flag` is set. Absent switches leave the
    /// lower layers alone.
    pub fn switch(self, path: &str, flag: bool, value: bool) -> Self {
        self.set(path, flag.then_some(value))
    }

    pub fn into_value(self) -> Value {
        Value::Object(self.0)
    }
}

/// Replaces scalars and arrays, recurses into objects.
pub fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Resolves `section` with precedence flags > file > defaults. Shared
/// sections appear as nested fields of the same name when `T` has them.
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: &ConfigFile,
    section: &str,
    flags: Overrides,
) -> Result<T, CliError> {
    let mut value = serde_json::to_value(defaults).expect("settings serialize");
    for shared in SHARED_SECTIONS {
        if let (Some(v), Some(obj)) = (file.section(shared), value.as_object()) {
            if obj.contains_key(shared) {
                merge(&mut value, &serde_json::json!({ shared: v }));
            }
        }
    }
    if let Some(v) = file.section(section) {
        merge(&mut value, v);
    }
    merge(&mut value, &flags.into_value());
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("[{section}] {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Inner {
        a: u32,
        b: String,
    }

    impl Default for Inner {
        fn default() -> Self {
            Self { a: 1, b: "x".into() }
        }
    }

    #[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Settings {
        steps: u32,
        rate: f64,
        llm: Inner,
    }

    fn defaults() -> Settings {
        Settings {
            steps: 10,
            rate: 0.5,
            llm: Inner::default(),
        }
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = ConfigFile::parse_toml("[train_toy]\nsteps = 20\nrate = 0.25\n[llm]\na = 7\n").unwrap();
        let s: Settings = resolve(&defaults(), &file, "train_toy", Overrides::new().set("steps", Some(30))).unwrap();
        assert_eq!(s.steps, 30);
        assert_eq!(s.rate, 0.25);
        assert_eq!(s.llm, Inner { a: 7, b: "x".into() });
        let none: Settings = resolve(&defaults(), &ConfigFile::default(), "train_toy", Overrides::new()).unwrap();
        assert_eq!(none, defaults());
    }

    #[test]
    fn nested_flags_merge_into_shared_sections() {
        let file = ConfigFile::parse_toml("[llm]\nb = \"file\"\n[train_toy.llm]\na = 3\n").unwrap();
        let s: Settings = resolve(&defaults(), &file, "train_toy", Overrides::new().set("llm.b", Some("flag"))).unwrap();
        assert_eq!(s.llm, Inner { a: 3, b: "flag".into() });
    }

    #[test]
    fn unknown_keys_and_sections_are_config_errors() {
        let file = ConfigFile::parse_toml("[train_toy]\nstepz = 1\n").unwrap();
        assert!(matches!(resolve(&defaults(), &file, "train_toy", Overrides::new()), Err(CliError::Config(_))));
        assert!(ConfigFile::parse_toml("[trian]\n").is_err());
        assert!(ConfigFile::parse_toml("steps = 3\n").is_err());
        assert!(ConfigFile::parse_toml("[train_toy\n").is_err());
        let wrong_type = ConfigFile::parse_toml("[train_toy]\nsteps = \"many\"\n").unwrap();
        assert!(resolve(&defaults(), &wrong_type, "train_toy", Overrides::new()).is_err());
    }

    #[test]
    fn section_names() {
        assert_eq!(section_name("critique build"), "critique_build");
        assert_eq!(section_name("train-toy"), "train_toy");
        for c in COMMAND_SECTIONS {
            assert_eq!(section_name(c), c);
        }
    }
}
