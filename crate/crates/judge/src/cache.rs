//! Content-addressed response cache: one JSON file per SHA-256 digest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nlhf_core::prompt::TemplateId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub template_id: TemplateId,
    pub model: String,
    pub prompt: String,
    pub raw: String,
}

/// Hex SHA-256 over length-prefixed template id, prompt and model name.
pub fn cache_key(template: TemplateId, prompt: &str, model: &str) -> String {
    let mut h = Sha256::new();
    for part in [template.as_str(), prompt, model] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug)]
pub struct DiskCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl DiskCache {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(DiskCache {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Unreadable or mismatched entries count as misses.
    pub fn get(
        &self,
        key: &str,
        template: TemplateId,
        prompt: &str,
        model: &str,
    ) -> Option<String> {
        let bytes = fs::read(self.path(key)).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        (entry.template_id == template && entry.prompt == prompt && entry.model == model)
            .then_some(entry.raw)
    }

    /// Writes go to a temp file and are renamed into place, so readers never see a torn entry.
    pub fn put(&self, key: &str, entry: &CacheEntry) -> std::io::Result<()> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let tmp = self.dir.join(format!(".{key}.tmp"));
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&serde_json::to_vec_pretty(entry)?)?;
        f.sync_all()?;
        fs::rename(tmp, self.path(key))
    }
}
