use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// One dispatched (non-cached) model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub timestamp: String,
    pub tag: String,
    pub digest: String,
    pub backend_id: String,
    pub prompt: String,
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
    pub attempts: u32,
}

/// Append-only call log, kept in memory and optionally mirrored to a
/// line-delimited file.
#[derive(Debug)]
pub struct Transcript {
    file: Option<Mutex<File>>,
    records: Mutex<Vec<TranscriptRecord>>,
}

impl Transcript {
    pub fn in_memory() -> Self {
        Self {
            file: None,
            records: Mutex::new(Vec::new()),
        }
    }

    pub fn to_file(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Some(Mutex::new(file)),
            records: Mutex::new(Vec::new()),
        })
    }

    pub fn append(&self, rec: TranscriptRecord) -> std::io::Result<()> {
        if let Some(file) = &self.file {
            let mut line = serde_json::to_vec(&rec)?;
            line.push(b'\n');
            file.lock().expect("transcript poisoned").write_all(&line)?;
        }
        self.records.lock().expect("transcript poisoned").push(rec);
        Ok(())
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.records.lock().expect("transcript poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("transcript poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of records whose tag starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.records
            .lock()
            .expect("transcript poisoned")
            .iter()
            .filter(|r| r.tag.starts_with(prefix))
            .count()
    }
}
