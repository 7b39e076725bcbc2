use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CacheKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedEntry {
    pub digest: String,
    pub backend_id: String,
    pub model_id: String,
    pub text: String,
    pub latency_ms: u64,
    pub attempts: u32,
}

/// One JSON file per digest under a root directory. Writes go through a
/// temp file and rename, so concurrent writers of the same key leave one
/// complete entry (last writer wins).
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root.join(format!("{}.json", key.as_str()))
    }

    pub fn get(&self, key: &CacheKey) -> Option<CachedEntry> {
        let path = self.path_for(key);
        let bytes = std::fs::read(&path).ok()?;
        match serde_json::from_slice::<CachedEntry>(&bytes) {
            Ok(e) if e.digest == key.as_str() => Some(e),
            Ok(_) | Err(_) => {
                log::warn!("ignoring unreadable cache entry {}", path.display());
                None
            }
        }
    }

    pub fn put(&self, key: &CacheKey, entry: &CachedEntry) -> std::io::Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root)?;
        serde_json::to_writer(&mut tmp, entry)?;
        tmp.flush()?;
        tmp.persist(self.path_for(key)).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        std::fs::read_dir(&self.root)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
