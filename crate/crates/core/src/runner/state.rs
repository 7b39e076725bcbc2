use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::RunnerError;
use crate::pipeline::Prediction;

pub const PREDICTIONS: &str = "predictions.jsonl";
pub const COMPLETED: &str = "completed.jsonl";
pub const FAILURES: &str = "failures.jsonl";
pub const DEVIATIONS: &str = "deviations.jsonl";

/// A (spec, sample) pair. The spec id already encodes the repeat.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitKey {
    pub spec: String,
    pub sample_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub spec: String,
    pub sample_id: String,
    pub repeat: u32,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    pub message: String,
}

/// Reads a JSON-lines file, skipping lines that do not parse (a torn final
/// write after a crash, for instance).
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RunnerError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(RunnerError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RunnerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            Err(e) => log::warn!("{}:{}: skipping unreadable record: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

/// Ends a torn final record with a newline so later appends start clean.
fn terminate_last_line(f: &mut File) -> std::io::Result<()> {
    use std::io::{Read, Seek, SeekFrom};
    let len = f.metadata()?.len();
    if len == 0 {
        return Ok(());
    }
    f.seek(SeekFrom::Start(len - 1))?;
    let mut last = [0u8; 1];
    f.read_exact(&mut last)?;
    if last[0] != b'\n' {
        f.write_all(b"\n")?;
    }
    Ok(())
}

struct Files {
    predictions: File,
    completed: File,
    failures: File,
    deviations: File,
}

/// Durable per-unit progress of a run.
///
/// A unit counts as complete only once its completion marker is on disk,
/// and the marker is written after the prediction record.
pub struct RunState {
    dir: PathBuf,
    completed: BTreeSet<UnitKey>,
    files: Mutex<Files>,
}

impl RunState {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, RunnerError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| RunnerError::Io {
            path: dir.clone(),
            source,
        })?;
        let completed: BTreeSet<UnitKey> = read_jsonl::<UnitKey>(&dir.join(COMPLETED))?.into_iter().collect();
        let open = |name: &str| {
            let path = dir.join(name);
            let io = |source| RunnerError::Io {
                path: path.clone(),
                source,
            };
            let mut f = OpenOptions::new().create(true).read(true).append(true).open(&path).map_err(io)?;
            terminate_last_line(&mut f).map_err(io)?;
            Ok::<_, RunnerError>(f)
        };
        let files = Files {
            predictions: open(PREDICTIONS)?,
            completed: open(COMPLETED)?,
            failures: open(FAILURES)?,
            deviations: open(DEVIATIONS)?,
        };
        Ok(Self {
            dir,
            completed,
            files: Mutex::new(files),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn is_complete(&self, key: &UnitKey) -> bool {
        self.completed.contains(key)
    }

    pub fn completed_count(&self) -> usize {
        self.completed.len()
    }

    fn append(&self, file: &mut File, name: &str, value: &impl Serialize) -> Result<(), RunnerError> {
        let mut line = serde_json::to_string(value).expect("record serializes");
        line.push('\n');
        let io = |source| RunnerError::Io {
            path: self.dir.join(name),
            source,
        };
        file.write_all(line.as_bytes()).map_err(io)?;
        file.sync_data().map_err(io)
    }

    /// Persists a prediction, then its completion marker.
    pub fn record_prediction(&self, p: &Prediction) -> Result<(), RunnerError> {
        let mut f = self.files.lock().expect("state poisoned");
        self.append(&mut f.predictions, PREDICTIONS, p)?;
        let key = UnitKey {
            spec: p.spec.clone(),
            sample_id: p.sample_id.clone(),
        };
        self.append(&mut f.completed, COMPLETED, &key)
    }

    pub fn record_failure(&self, rec: &FailureRecord) -> Result<(), RunnerError> {
        let mut f = self.files.lock().expect("state poisoned");
        self.append(&mut f.failures, FAILURES, rec)
    }

    pub fn record_deviation(&self, rec: &DeviationRecord) -> Result<(), RunnerError> {
        let mut f = self.files.lock().expect("state poisoned");
        self.append(&mut f.deviations, DEVIATIONS, rec)
    }
}

/// Completed predictions of a run directory, one per unit. When a unit was
/// recorded more than once the last record wins.
pub fn load_predictions(dir: &Path) -> Result<BTreeMap<UnitKey, Prediction>, RunnerError> {
    let completed: BTreeSet<UnitKey> = read_jsonl::<UnitKey>(&dir.join(COMPLETED))?.into_iter().collect();
    let mut out = BTreeMap::new();
    for p in read_jsonl::<Prediction>(&dir.join(PREDICTIONS))? {
        let key = UnitKey {
            spec: p.spec.clone(),
            sample_id: p.sample_id.clone(),
        };
        if completed.contains(&key) {
            out.insert(key, p);
        }
    }
    Ok(out)
}
