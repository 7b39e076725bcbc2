//! Deterministic scripted backend.
//!
//! A script is line-delimited JSON. Each line pairs a matcher with a reply:
//!
//! ```text
//! {"matcher": {"digest": "<64 hex>"}, "response_text": "[happy]"}
//! {"matcher": {"backend_id": "llm", "tag_prefix": "s001/stage2"}, "response_text": "[calm]"}
//! {"matcher": {"backend_id": "llm", "tag_prefix": ""}, "error": {"kind": "retryable", "message": "503"}}
//! ```
//!
//! Digest matchers answer every matching request and take precedence. FIFO
//! matchers are consumed in file order; among queues whose backend id matches
//! and whose prefix starts the request tag, the longest prefix is used. Blank
//! lines and lines starting with `#` are ignored.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CacheKey, ModelRequest, Transport, TransportError};

#[derive(Debug, Error)]
pub enum MockScriptError {
    #[error("mock script line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("reading mock script: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Matcher {
    Digest { digest: String },
    Fifo { backend_id: String, tag_prefix: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Retryable,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedFailure {
    pub kind: FailureKind,
    #[serde(default)]
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Text(String),
    Fail(ScriptedFailure),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    matcher: Matcher,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<ScriptedFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockEntry {
    pub matcher: Matcher,
    pub reply: MockReply,
}

impl MockEntry {
    pub fn fifo(backend_id: &str, tag_prefix: &str, text: &str) -> Self {
        Self {
            matcher: Matcher::Fifo {
                backend_id: backend_id.into(),
                tag_prefix: tag_prefix.into(),
            },
            reply: MockReply::Text(text.into()),
        }
    }

    /// Serializes back to one script line.
    pub fn to_line(&self) -> String {
        let (response_text, error) = match &self.reply {
            MockReply::Text(t) => (Some(t.clone()), None),
            MockReply::Fail(f) => (None, Some(f.clone())),
        };
        serde_json::to_string(&ScriptLine {
            matcher: self.matcher.clone(),
            response_text,
            error,
        })
        .expect("script line serializes")
    }
}

struct FifoQueue {
    backend_id: String,
    prefix: String,
    replies: VecDeque<MockReply>,
}

pub struct MockBackend {
    by_digest: HashMap<String, MockReply>,
    fifos: Mutex<Vec<FifoQueue>>,
}

impl std::fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockBackend")
            .field("digests", &self.by_digest.len())
            .field("fifo_remaining", &self.remaining())
            .finish()
    }
}

impl MockBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = MockEntry>) -> Self {
        let mut by_digest = HashMap::new();
        let mut fifos: Vec<FifoQueue> = Vec::new();
        for e in entries {
            match e.matcher {
                Matcher::Digest { digest } => {
                    by_digest.insert(digest.to_ascii_lowercase(), e.reply);
                }
                Matcher::Fifo { backend_id, tag_prefix } => {
                    match fifos.iter_mut().find(|q| q.backend_id == backend_id && q.prefix == tag_prefix) {
                        Some(q) => q.replies.push_back(e.reply),
                        None => fifos.push(FifoQueue {
                            backend_id,
                            prefix: tag_prefix,
                            replies: VecDeque::from([e.reply]),
                        }),
                    }
                }
            }
        }
        Self {
            by_digest,
            fifos: Mutex::new(fifos),
        }
    }

    /// FIFO replies not yet consumed.
    pub fn remaining(&self) -> usize {
        self.fifos.lock().unwrap().iter().map(|q| q.replies.len()).sum()
    }

    fn next_reply(&self, req: &ModelRequest, digest: &CacheKey) -> Option<MockReply> {
        if let Some(r) = self.by_digest.get(digest.as_str()) {
            return Some(r.clone());
        }
        let mut fifos = self.fifos.lock().expect("mock poisoned");
        let q = fifos
            .iter_mut()
            .filter(|q| q.backend_id == req.binding.backend_id && req.tag.starts_with(&q.prefix))
            .max_by_key(|q| q.prefix.len())?;
        q.replies.pop_front()
    }
}

impl Transport for MockBackend {
    fn send(&self, req: &ModelRequest, digest: &CacheKey, _bearer: Option<&str>) -> Result<String, TransportError> {
        match self.next_reply(req, digest) {
            Some(MockReply::Text(t)) => Ok(t),
            Some(MockReply::Fail(f)) => Err(match f.kind {
                FailureKind::Retryable => TransportError::Retryable(f.message),
                FailureKind::Fatal => TransportError::Fatal(f.message),
            }),
            None => Err(TransportError::Unscripted),
        }
    }
}

pub fn parse_mock_script(text: &str) -> Result<MockBackend, MockScriptError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |message: String| MockScriptError::Malformed { line: i + 1, message };
        let parsed: ScriptLine = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if let Matcher::Digest { digest } = &parsed.matcher {
            if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(malformed(format!("digest must be 64 hex characters, got `{digest}`")));
            }
        }
        let reply = match (parsed.response_text, parsed.error) {
            (Some(t), None) => MockReply::Text(t),
            (None, Some(f)) => MockReply::Fail(f),
            _ => return Err(malformed("exactly one of `response_text` or `error` is required".into())),
        };
        entries.push(MockEntry {
            matcher: parsed.matcher,
            reply,
        });
    }
    Ok(MockBackend::from_entries(entries))
}

pub fn load_mock_script(path: impl AsRef<Path>) -> Result<MockBackend, MockScriptError> {
    parse_mock_script(&std::fs::read_to_string(path)?)
}
