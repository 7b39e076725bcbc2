//! Builds self-contained scripted runs in a temporary directory.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use merov::backend::MockEntry;

pub struct ClipSpec {
    pub id: &'static str,
    pub subtitle: &'static str,
    pub labels: &'static [&'static str],
    pub audio: bool,
}

pub struct Scenario {
    pub dir: tempfile::TempDir,
    pub clips: Vec<ClipSpec>,
    pub script: Vec<MockEntry>,
    /// Extra top-level TOML placed before the binding tables.
    pub settings: String,
}

pub const FRAMES: u32 = 8;

impl Scenario {
    pub fn new(clips: Vec<ClipSpec>) -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
            clips,
            script: Vec::new(),
            settings: String::new(),
        }
    }

    pub fn reply(&mut self, backend: &str, prefix: &str, text: &str, times: usize) -> &mut Self {
        for _ in 0..times {
            self.script.push(MockEntry::fifo(backend, prefix, text));
        }
        self
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Writes media, manifest, script and config; returns the config path.
    pub fn write(&self, run_dir: &str) -> PathBuf {
        let root = self.dir.path();
        let mut manifest = String::new();
        for c in &self.clips {
            let frames = root.join("media").join(c.id);
            std::fs::create_dir_all(&frames).unwrap();
            for i in 0..FRAMES {
                std::fs::write(frames.join(format!("{i}.jpg")), format!("frame {} {i}", c.id)).unwrap();
            }
            let mut rec = serde_json::json!({
                "id": c.id,
                "video": format!("media/{}", c.id),
                "duration_s": 1.0,
                "native_fps": FRAMES as f64,
                "subtitle": c.subtitle,
                "labels": c.labels,
            });
            if c.audio {
                let wav = root.join("media").join(format!("{}.wav", c.id));
                std::fs::write(&wav, format!("RIFF audio {}", c.id)).unwrap();
                rec["audio"] = format!("media/{}.wav", c.id).into();
            }
            writeln!(manifest, "{rec}").unwrap();
        }
        std::fs::write(root.join("manifest.jsonl"), manifest).unwrap();
        let script: String = self.script.iter().map(|e| e.to_line() + "\n").collect();
        std::fs::write(root.join("mock.jsonl"), script).unwrap();

        let config = format!(
            r#"manifest = "manifest.jsonl"
run_dir = "{run_dir}"
{settings}

[[sampling]]
kind = "fixed"
fixed_count = {FRAMES}

[mock_scripts]
s = "mock.jsonl"

[[llm]]
backend_id = "llm"
model_id = "scripted-llm"
capability = "text"
endpoint = "mock:s"

[[video]]
backend_id = "video"
model_id = "scripted-video"
capability = "text+frames"
endpoint = "mock:s"

[[audio]]
backend_id = "audio"
model_id = "scripted-audio"
capability = "text+audio"
endpoint = "mock:s"
"#,
            settings = self.settings,
        );
        let path = root.join(format!("{run_dir}.toml"));
        std::fs::write(&path, config).unwrap();
        path
    }
}

/// Stage-1 replies for every clip, enough for `times` uncached calls each.
pub fn script_stage1(s: &mut Scenario, times: usize) {
    let ids: Vec<&str> = s.clips.iter().map(|c| c.id).collect();
    for id in ids {
        s.reply("video", &format!("{id}/stage1/video"), &format!("{id}: face tense, then relaxes."), times);
        s.reply("audio", &format!("{id}/stage1/audio"), &format!("{id}: voice rises and falls."), times);
    }
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}
