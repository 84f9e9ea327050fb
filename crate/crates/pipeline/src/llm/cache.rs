use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LlmError, LlmRequest};

/// SHA-256 hex digest of a prompt.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Cache key over `(model_tag, prompt hash, temperature)`.
pub fn cache_key(req: &LlmRequest) -> String {
    let mut h = Sha256::new();
    h.update(req.model_tag.as_bytes());
    h.update([0]);
    h.update(prompt_hash(&req.prompt).as_bytes());
    h.update([0]);
    h.update(req.temperature.to_bits().to_le_bytes());
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model_tag: String,
    pub temperature: f64,
    pub prompt_sha256: String,
    pub response: String,
}

/// One JSON file per response, named `<key>.json`, in a flat directory.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| LlmError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, req: &LlmRequest) -> Result<Option<String>, LlmError> {
        let key = cache_key(req);
        let path = self.path_for(&key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(LlmError::Cache(format!("{}: {e}", path.display()))),
        };
        let entry: CacheEntry =
            serde_json::from_slice(&bytes).map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))?;
        if entry.key != key {
            return Err(LlmError::Cache(format!("{} holds key {}", path.display(), entry.key)));
        }
        Ok(Some(entry.response))
    }

    pub fn put(&self, req: &LlmRequest, response: &str) -> Result<(), LlmError> {
        let key = cache_key(req);
        let entry = CacheEntry {
            key: key.clone(),
            model_tag: req.model_tag.clone(),
            temperature: req.temperature,
            prompt_sha256: prompt_hash(&req.prompt),
            response: response.to_string(),
        };
        let bytes = serde_json::to_vec_pretty(&entry).map_err(|e| LlmError::Cache(e.to_string()))?;
        let path = self.path_for(&key);
        let tmp = self.dir.join(format!(".{key}.tmp"));
        let _guard = self.write_lock.lock().expect("cache lock poisoned");
        fs::write(&tmp, bytes)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| LlmError::Cache(format!("{}: {e}", path.display())))
    }

    pub fn len(&self) -> usize {
        fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(|e| e.ok())
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
