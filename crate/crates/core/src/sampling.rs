//! Frame-selection planning and frame retrieval.
//!
//! Two policies: a fixed number of frames spread uniformly over the clip, and
//! a fixed rate in frames per second of video. Planning is pure arithmetic;
//! frames are read either from a pre-extracted directory (zero-padded decimal
//! index filenames) or produced by an external extractor command.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::MediaPayload;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("invalid sampling input: {0}")]
    InvalidInput(String),
    #[error("EXTRACTOR_FAILED: {command} exited with {status}: {stderr}")]
    ExtractorFailed {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("MISSING_FRAME: frame {index} not found under {location}")]
    MissingFrame { index: u64, location: PathBuf },
    #[error("frame io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingPolicy {
    Fixed { fixed_count: u32 },
    Dynamic { rate_fps: f64 },
}

impl SamplingPolicy {
    pub const FIXED_24: SamplingPolicy = SamplingPolicy::Fixed { fixed_count: 24 };
    pub const DYNAMIC_RATES: [f64; 4] = [1.0, 2.0, 4.0, 6.0];

    /// The preset sweep: 24 fixed frames, then 1, 2, 4 and 6 fps.
    pub fn presets() -> Vec<SamplingPolicy> {
        std::iter::once(Self::FIXED_24)
            .chain(Self::DYNAMIC_RATES.iter().map(|&r| SamplingPolicy::Dynamic { rate_fps: r }))
            .collect()
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        match *self {
            SamplingPolicy::Fixed { fixed_count } if fixed_count == 0 => {
                Err(SamplingError::InvalidInput("fixed_count must be > 0".into()))
            }
            SamplingPolicy::Dynamic { rate_fps } if !(rate_fps.is_finite() && rate_fps > 0.0) => {
                Err(SamplingError::InvalidInput(format!("rate_fps must be > 0, got {rate_fps}")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_preset(&self) -> bool {
        match *self {
            SamplingPolicy::Fixed { fixed_count } => fixed_count == 24,
            SamplingPolicy::Dynamic { rate_fps } => Self::DYNAMIC_RATES.contains(&rate_fps),
        }
    }

    /// Plans frames for a clip described by its duration and frame rate.
    pub fn plan(&self, duration_s: f64, native_fps: f64) -> Result<FramePlan, SamplingError> {
        match *self {
            SamplingPolicy::Fixed { fixed_count } => {
                let total = (duration_s * native_fps).floor();
                if !(total >= 1.0) {
                    return Err(SamplingError::InvalidInput(format!(
                        "clip has no frames (duration {duration_s} s at {native_fps} fps)"
                    )));
                }
                plan_fixed(total as u64, fixed_count as u64)
            }
            SamplingPolicy::Dynamic { rate_fps } => plan_dynamic(duration_s, native_fps, rate_fps),
        }
    }
}

impl fmt::Display for SamplingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingPolicy::Fixed { fixed_count } => write!(f, "fixed-{fixed_count}"),
            SamplingPolicy::Dynamic { rate_fps } => write!(f, "{rate_fps}fps"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePlan {
    pub indices: Vec<u64>,
    pub policy: SamplingPolicy,
    pub total_frames: u64,
}

/// Uniform fixed-count plan: index `floor(i * total / n)` for `i in 0..n`.
/// Returns every frame once when `n >= total_frames`.
pub fn plan_fixed(total_frames: u64, n: u64) -> Result<FramePlan, SamplingError> {
    if total_frames == 0 || n == 0 {
        return Err(SamplingError::InvalidInput(format!(
            "plan_fixed needs total_frames >= 1 and n >= 1 (got {total_frames}, {n})"
        )));
    }
    let policy = SamplingPolicy::Fixed {
        fixed_count: n.min(u32::MAX as u64) as u32,
    };
    let indices = if n >= total_frames {
        (0..total_frames).collect()
    } else {
        let mut out: Vec<u64> = Vec::with_capacity(n as usize);
        for i in 0..n {
            let idx = ((i as u128 * total_frames as u128) / n as u128) as u64;
            if out.last() != Some(&idx) {
                out.push(idx);
            }
        }
        out
    };
    Ok(FramePlan {
        indices,
        policy,
        total_frames,
    })
}

/// Rate-based plan. Targets `k = max(1, round(duration * rate))` frames at the
/// midpoints `(i + 0.5) * duration / k`, clamped to the clip's frame range.
pub fn plan_dynamic(duration_s: f64, native_fps: f64, rate_fps: f64) -> Result<FramePlan, SamplingError> {
    let finite_pos = |v: f64| v.is_finite() && v > 0.0;
    if !(finite_pos(duration_s) && finite_pos(native_fps) && finite_pos(rate_fps)) {
        return Err(SamplingError::InvalidInput(format!(
            "plan_dynamic needs positive finite inputs (got duration {duration_s}, fps {native_fps}, rate {rate_fps})"
        )));
    }
    let total = (duration_s * native_fps).floor();
    if total < 1.0 {
        return Err(SamplingError::InvalidInput(format!(
            "clip has no frames (duration {duration_s} s at {native_fps} fps)"
        )));
    }
    let total_frames = total as u64;
    let k = (duration_s * rate_fps).round().max(1.0) as u64;
    let step = duration_s / k as f64;
    let mut indices: Vec<u64> = Vec::with_capacity(k.min(total_frames) as usize);
    for i in 0..k {
        let t = (i as f64 + 0.5) * step;
        let idx = ((t * native_fps).floor().max(0.0) as u64).min(total_frames - 1);
        if indices.last() != Some(&idx) {
            indices.push(idx);
        }
    }
    Ok(FramePlan {
        indices,
        policy: SamplingPolicy::Dynamic { rate_fps },
        total_frames,
    })
}

/// External extractor invocation. `command` is an argv template; the
/// placeholders `{input}`, `{index_list}` (comma-separated indices) and
/// `{out_dir}` are substituted in every argument. The command must write
/// `<index>.jpg` into `out_dir` for every requested index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub command: Vec<String>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        // ffmpeg frame-select by index list, one jpg per selected frame.
        Self {
            command: vec![
                "sh".into(),
                "-c".into(),
                concat!(
                    "set -e; for i in $(echo {index_list} | tr , ' '); do ",
                    "ffmpeg -loglevel error -y -i '{input}' -vf \"select=eq(n\\,$i)\" -vframes 1 '{out_dir}'/$i.jpg; ",
                    "done"
                )
                .into(),
            ],
        }
    }
}

/// Returns one image payload per planned index, in plan order.
pub fn extract_frames(
    video_ref: &Path,
    plan: &FramePlan,
    extractor: &ExtractorConfig,
) -> Result<Vec<MediaPayload>, SamplingError> {
    if video_ref.is_dir() {
        read_frame_directory(video_ref, &plan.indices)
    } else {
        run_extractor(video_ref, &plan.indices, extractor)
    }
}

fn read_frame_directory(dir: &Path, indices: &[u64]) -> Result<Vec<MediaPayload>, SamplingError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SamplingError::Io { path, source }
    };
    let mut by_index: HashMap<u64, PathBuf> = HashMap::new();
    for entry in std::fs::read_dir(dir).map_err(io(dir))? {
        let entry = entry.map_err(io(dir))?;
        let path = entry.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        if let Ok(idx) = stem.parse::<u64>() {
            by_index.entry(idx).or_insert(path);
        }
    }
    indices
        .iter()
        .map(|&idx| {
            let path = by_index.get(&idx).ok_or_else(|| SamplingError::MissingFrame {
                index: idx,
                location: dir.to_path_buf(),
            })?;
            read_image(path)
        })
        .collect()
}

fn run_extractor(input: &Path, indices: &[u64], cfg: &ExtractorConfig) -> Result<Vec<MediaPayload>, SamplingError> {
    let out_dir = tempfile::tempdir().map_err(|source| SamplingError::Io {
        path: std::env::temp_dir(),
        source,
    })?;
    let index_list = indices.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
    let input_s = input.display().to_string();
    let out_s = out_dir.path().display().to_string();
    let argv: Vec<String> = cfg
        .command
        .iter()
        .map(|a| {
            a.replace("{input}", &input_s)
                .replace("{index_list}", &index_list)
                .replace("{out_dir}", &out_s)
        })
        .collect();
    let Some((program, args)) = argv.split_first() else {
        return Err(SamplingError::InvalidInput("extractor command is empty".into()));
    };
    let output = Command::new(program).args(args).output().map_err(|source| SamplingError::Io {
        path: PathBuf::from(program),
        source,
    })?;
    if !output.status.success() {
        return Err(SamplingError::ExtractorFailed {
            command: program.clone(),
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    indices
        .iter()
        .map(|&idx| {
            let path = out_dir.path().join(format!("{idx}.jpg"));
            if !path.is_file() {
                return Err(SamplingError::MissingFrame {
                    index: idx,
                    location: out_dir.path().to_path_buf(),
                });
            }
            read_image(&path)
        })
        .collect()
}

fn read_image(path: &Path) -> Result<MediaPayload, SamplingError> {
    let bytes = std::fs::read(path).map_err(|source| SamplingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ref e) if e == "png" => "image/png",
        Some(ref e) if e == "webp" => "image/webp",
        _ => "image/jpeg",
    };
    Ok(MediaPayload::image(mime, bytes))
}
