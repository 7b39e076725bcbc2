//! Sample manifests: loading, validation and summary statistics.
//!
//! A manifest is line-delimited JSON, one sample per line:
//!
//! ```text
//! {"id": "s001", "video": "frames/s001", "audio": "audio/s001.wav", "subtitle": "...",
//!  "duration_s": 3.9, "native_fps": 24.9, "title": "...",
//!  "characters": [{"name": "...", "basic_info": "...", "traits": "..."}],
//!  "labels": ["suspicious", "angry"]}
//! ```
//!
//! Relative media paths are resolved against the manifest's directory.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::labels::EmotionLabelSet;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest line {line}: field `{field}`: {message}")]
    Malformed {
        line: usize,
        field: String,
        message: String,
    },
    #[error("manifest line {line}: duplicate sample id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("EMPTY_DATASET: no samples")]
    EmptyDataset,
    #[error("reading manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterProfile {
    pub name: String,
    #[serde(default)]
    pub basic_info: String,
    #[serde(default, rename = "traits", skip_serializing_if = "Option::is_none")]
    pub traits_and_experiences: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub video_ref: PathBuf,
    pub audio_ref: Option<PathBuf>,
    pub subtitle: String,
    pub duration_s: f64,
    pub native_fps: f64,
    pub title: Option<String>,
    pub characters: Vec<CharacterProfile>,
    pub labels: EmotionLabelSet,
}

impl Sample {
    /// Frame count implied by the manifest's duration and frame rate.
    pub fn total_frames(&self) -> u64 {
        (self.duration_s * self.native_fps).floor().max(0.0) as u64
    }

    pub fn has_audio(&self) -> bool {
        self.audio_ref.is_some()
    }
}

/// Machine-readable validation issue codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    EmptyId,
    MissingGroundTruth,
    InvalidDuration,
    InvalidFps,
    VideoNotFound,
    AudioNotFound,
    EmptyCharacterName,
}

impl IssueCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            IssueCode::EmptyId => "EMPTY_ID",
            IssueCode::MissingGroundTruth => "MISSING_GROUND_TRUTH",
            IssueCode::InvalidDuration => "INVALID_DURATION",
            IssueCode::InvalidFps => "INVALID_FPS",
            IssueCode::VideoNotFound => "VIDEO_NOT_FOUND",
            IssueCode::AudioNotFound => "AUDIO_NOT_FOUND",
            IssueCode::EmptyCharacterName => "EMPTY_CHARACTER_NAME",
        }
    }
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationIssue {
    pub sample_id: String,
    pub code: IssueCode,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sample_count: usize,
    pub unique_label_count: usize,
    pub mean_labels_per_sample: f64,
    pub duration_min_s: f64,
    pub duration_max_s: f64,
    pub duration_mean_s: f64,
    pub audio_missing_count: usize,
}

/// Reads and parses a manifest file. Relative media paths resolve against
/// the manifest's parent directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Sample>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text, path.parent())
}

/// Parses manifest text. Blank lines are skipped; line numbers in errors are
/// 1-based.
pub fn parse_manifest(text: &str, base_dir: Option<&Path>) -> Result<Vec<Sample>, DatasetError> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_record(line, line_no, base_dir)?;
        if !seen.insert(sample.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: sample.id,
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}

const KNOWN_FIELDS: &[&str] = &[
    "id",
    "video",
    "audio",
    "subtitle",
    "duration_s",
    "native_fps",
    "title",
    "characters",
    "labels",
];

fn parse_record(line: &str, line_no: usize, base_dir: Option<&Path>) -> Result<Sample, DatasetError> {
    let malformed = |field: &str, message: String| DatasetError::Malformed {
        line: line_no,
        field: field.to_string(),
        message,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| malformed("<record>", e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(malformed("<record>", "expected a JSON object".into()));
    };
    if let Some(unknown) = obj.keys().find(|k| !KNOWN_FIELDS.contains(&k.as_str())) {
        return Err(malformed(unknown, "unknown field".into()));
    }

    let id: String = required(&mut obj, "id", line_no)?;
    let video: String = required(&mut obj, "video", line_no)?;
    let audio: Option<String> = optional(&mut obj, "audio", line_no)?;
    let subtitle: Option<String> = optional(&mut obj, "subtitle", line_no)?;
    let duration_s: f64 = required(&mut obj, "duration_s", line_no)?;
    let native_fps: f64 = required(&mut obj, "native_fps", line_no)?;
    let title: Option<String> = optional(&mut obj, "title", line_no)?;
    let characters: Option<Vec<CharacterProfile>> = optional(&mut obj, "characters", line_no)?;
    let labels: Option<Vec<String>> = optional(&mut obj, "labels", line_no)?;

    let resolve = |p: String| {
        let p = PathBuf::from(p);
        match base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p,
        }
    };

    Ok(Sample {
        id,
        video_ref: resolve(video),
        audio_ref: audio.filter(|a| !a.is_empty()).map(resolve),
        subtitle: subtitle.unwrap_or_default(),
        duration_s,
        native_fps,
        title: title.filter(|t| !t.trim().is_empty()),
        characters: characters.unwrap_or_default(),
        labels: EmotionLabelSet::from_terms(labels.unwrap_or_default()),
    })
}

fn required<T: DeserializeOwned>(obj: &mut Map<String, Value>, field: &str, line: usize) -> Result<T, DatasetError> {
    match obj.remove(field) {
        None | Some(Value::Null) => Err(DatasetError::Malformed {
            line,
            field: field.to_string(),
            message: "missing required field".into(),
        }),
        Some(v) => serde_json::from_value(v).map_err(|e| DatasetError::Malformed {
            line,
            field: field.to_string(),
            message: e.to_string(),
        }),
    }
}

fn optional<T: DeserializeOwned>(
    obj: &mut Map<String, Value>,
    field: &str,
    line: usize,
) -> Result<Option<T>, DatasetError> {
    match obj.remove(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v)
            .map(Some)
            .map_err(|e| DatasetError::Malformed {
                line,
                field: field.to_string(),
                message: e.to_string(),
            }),
    }
}

/// Checks a sample's invariants and that its media locators exist.
pub fn validate_sample(s: &Sample) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    let mut push = |code: IssueCode, detail: String| {
        issues.push(ValidationIssue {
            sample_id: s.id.clone(),
            code,
            detail,
        })
    };
    if s.id.trim().is_empty() {
        push(IssueCode::EmptyId, "sample id is empty".into());
    }
    if s.labels.is_empty() {
        push(IssueCode::MissingGroundTruth, "no ground-truth labels".into());
    }
    if !s.duration_s.is_finite() || s.duration_s < 0.0 {
        push(IssueCode::InvalidDuration, format!("duration_s = {}", s.duration_s));
    }
    if !s.native_fps.is_finite() || s.native_fps <= 0.0 {
        push(IssueCode::InvalidFps, format!("native_fps = {}", s.native_fps));
    }
    if !s.video_ref.exists() {
        push(IssueCode::VideoNotFound, s.video_ref.display().to_string());
    }
    if let Some(audio) = &s.audio_ref {
        if !audio.exists() {
            push(IssueCode::AudioNotFound, audio.display().to_string());
        }
    }
    for (i, c) in s.characters.iter().enumerate() {
        if c.name.trim().is_empty() {
            push(IssueCode::EmptyCharacterName, format!("characters[{i}]"));
        }
    }
    issues
}

pub fn dataset_stats(samples: &[Sample]) -> Result<DatasetStats, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let n = samples.len() as f64;
    let unique: BTreeSet<&str> = samples.iter().flat_map(|s| s.labels.iter()).collect();
    let total_labels: usize = samples.iter().map(|s| s.labels.len()).sum();
    let (mut dmin, mut dmax, mut dsum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for s in samples {
        dmin = dmin.min(s.duration_s);
        dmax = dmax.max(s.duration_s);
        dsum += s.duration_s;
    }
    Ok(DatasetStats {
        sample_count: samples.len(),
        unique_label_count: unique.len(),
        mean_labels_per_sample: total_labels as f64 / n,
        duration_min_s: dmin,
        duration_max_s: dmax,
        duration_mean_s: dsum / n,
        audio_missing_count: samples.iter().filter(|s| !s.has_audio()).count(),
    })
}
