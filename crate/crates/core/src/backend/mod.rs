//! Uniform adapter over model endpoints.
//!
//! Every model call goes through [`BackendClient::invoke`], which checks the
//! binding's capability against the request payload, consults the on-disk
//! response cache, rate-limits and retries the dispatch, and appends one
//! transcript record per non-cached call. Endpoints are either chat-completion
//! URLs or `mock:<script-id>` references to a loaded [`MockBackend`].

mod cache;
mod clock;
mod http;
mod mock;
mod ratelimit;
mod transcript;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CachedEntry, ResponseCache};
pub use clock::{Clock, FakeClock, SystemClock};
pub use http::{chat_request_body, parse_chat_response, HttpTransport};
pub use mock::{load_mock_script, parse_mock_script, Matcher, MockBackend, MockEntry, MockReply, MockScriptError};
pub use ratelimit::RateLimiter;
pub use transcript::{Transcript, TranscriptRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Capability {
    #[serde(rename = "text")]
    Text,
    #[serde(rename = "text+frames")]
    TextFrames,
    #[serde(rename = "text+audio")]
    TextAudio,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::Text => "text",
            Capability::TextFrames => "text+frames",
            Capability::TextAudio => "text+audio",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeParams {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_max_tokens() -> u32 {
    1024
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: default_max_tokens(),
            seed: None,
        }
    }
}

impl DecodeParams {
    /// Derives a distinct, reproducible seed for one draw of a repeated or
    /// sampled call. The binding's own seed (or 0) is mixed with `salt`.
    pub fn with_derived_seed(&self, salt: &[u64]) -> DecodeParams {
        let mut h = Sha256::new();
        h.update(self.seed.unwrap_or(0).to_le_bytes());
        for s in salt {
            h.update(s.to_le_bytes());
        }
        let out = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&out[..8]);
        // Keep within i64 range; several APIs reject larger seeds.
        let seed = u64::from_le_bytes(b) >> 1;
        DecodeParams {
            seed: Some(seed),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendBinding {
    pub backend_id: String,
    pub model_id: String,
    pub capability: Capability,
    /// Chat-completions URL or `mock:<script-id>`.
    pub endpoint: String,
    /// Environment variable holding the bearer token. `None` for endpoints
    /// that need no credentials.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_ref: Option<String>,
    #[serde(default)]
    pub decode: DecodeParams,
}

impl BackendBinding {
    pub fn mock_script_id(&self) -> Option<&str> {
        self.endpoint.strip_prefix("mock:")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Image,
    Audio,
}

#[derive(Clone, PartialEq, Eq)]
pub struct MediaPayload {
    pub kind: MediaKind,
    pub mime: String,
    pub bytes: Vec<u8>,
}

impl fmt::Debug for MediaPayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MediaPayload")
            .field("kind", &self.kind)
            .field("mime", &self.mime)
            .field("len", &self.bytes.len())
            .finish()
    }
}

impl MediaPayload {
    pub fn image(mime: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            kind: MediaKind::Image,
            mime: mime.into(),
            bytes,
        }
    }

    pub fn audio(mime: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            kind: MediaKind::Audio,
            mime: mime.into(),
            bytes,
        }
    }

    pub fn audio_from_file(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        let mime = match ext.as_str() {
            "mp3" => "audio/mpeg",
            "flac" => "audio/flac",
            "ogg" => "audio/ogg",
            "m4a" => "audio/mp4",
            _ => "audio/wav",
        };
        Ok(Self::audio(mime, bytes))
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.mime.as_bytes());
        h.update([0]);
        h.update(&self.bytes);
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone)]
pub struct ModelRequest {
    pub binding: BackendBinding,
    pub prompt_text: String,
    pub frames: Vec<MediaPayload>,
    pub audio: Option<MediaPayload>,
    /// Provenance label. Excluded from the digest.
    pub tag: String,
}

impl ModelRequest {
    pub fn text(binding: BackendBinding, prompt: impl Into<String>, tag: impl Into<String>) -> Self {
        Self {
            binding,
            prompt_text: prompt.into(),
            frames: Vec::new(),
            audio: None,
            tag: tag.into(),
        }
    }

    pub fn check_capability(&self) -> Result<(), BackendError> {
        let cap = self.binding.capability;
        let mismatch = |what: &str| BackendError::CapabilityMismatch {
            backend_id: self.binding.backend_id.clone(),
            capability: cap,
            detail: what.to_string(),
        };
        match (self.frames.is_empty(), self.audio.is_some()) {
            (false, true) => Err(mismatch("request carries both frames and audio")),
            (false, false) if cap != Capability::TextFrames => Err(mismatch("frames sent to a non-frames binding")),
            (true, true) if cap != Capability::TextAudio => Err(mismatch("audio sent to a non-audio binding")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub latency_ms: u64,
    pub from_cache: bool,
    pub attempt_count: u32,
}

/// Hex SHA-256 over the request's content-bearing fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Serialize)]
struct DigestMaterial<'a> {
    backend_id: &'a str,
    model_id: &'a str,
    prompt: &'a str,
    frames: Vec<String>,
    audio: Option<String>,
    decode: &'a DecodeParams,
}

pub fn request_digest(req: &ModelRequest) -> CacheKey {
    let material = DigestMaterial {
        backend_id: &req.binding.backend_id,
        model_id: &req.binding.model_id,
        prompt: &req.prompt_text,
        frames: req.frames.iter().map(MediaPayload::digest).collect(),
        audio: req.audio.as_ref().map(MediaPayload::digest),
        decode: &req.binding.decode,
    };
    let bytes = serde_json::to_vec(&material).expect("digest material serializes");
    CacheKey(hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("CAPABILITY_MISMATCH: {backend_id} ({capability}): {detail}")]
    CapabilityMismatch {
        backend_id: String,
        capability: Capability,
        detail: String,
    },
    #[error("AUTH_MISSING: environment variable `{var}` is not set for {backend_id}")]
    AuthMissing { backend_id: String, var: String },
    #[error("RETRIES_EXHAUSTED after {attempts} attempts: {last_error}")]
    RetriesExhausted { attempts: u32, last_error: String },
    #[error("MOCK_UNSCRIPTED: no scripted response for digest {digest} (tag `{tag}`)")]
    MockUnscripted { digest: String, tag: String },
    #[error("MOCK_SCRIPT_NOT_LOADED: `{script_id}`")]
    MockScriptNotLoaded { script_id: String },
    #[error("REQUEST_REJECTED: {0}")]
    Rejected(String),
    #[error("storage: {0}")]
    Storage(String),
}

impl BackendError {
    pub fn code(&self) -> &'static str {
        match self {
            BackendError::CapabilityMismatch { .. } => "CAPABILITY_MISMATCH",
            BackendError::AuthMissing { .. } => "AUTH_MISSING",
            BackendError::RetriesExhausted { .. } => "RETRIES_EXHAUSTED",
            BackendError::MockUnscripted { .. } => "MOCK_UNSCRIPTED",
            BackendError::MockScriptNotLoaded { .. } => "MOCK_SCRIPT_NOT_LOADED",
            BackendError::Rejected(_) => "REQUEST_REJECTED",
            BackendError::Storage(_) => "STORAGE",
        }
    }
}

/// Failure classes a transport can report.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    /// Connection failures, HTTP 429 and 5xx. Retried with backoff.
    Retryable(String),
    /// Anything else the endpoint refused. Not retried.
    Fatal(String),
    /// A mock had nothing scripted for this request.
    Unscripted,
}

pub trait Transport: Send + Sync {
    fn send(&self, req: &ModelRequest, digest: &CacheKey, bearer: Option<&str>) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 1000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based count of failed tries).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor))
    }
}

type EnvLookup = dyn Fn(&str) -> Option<String> + Send + Sync;

pub struct BackendClient {
    http: Arc<dyn Transport>,
    mocks: HashMap<String, Arc<MockBackend>>,
    cache: Option<ResponseCache>,
    transcript: Transcript,
    rate_limits: HashMap<String, u32>,
    limiters: Mutex<HashMap<String, Arc<RateLimiter>>>,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    env: Box<EnvLookup>,
}

impl fmt::Debug for BackendClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendClient")
            .field("mocks", &self.mocks.keys().collect::<Vec<_>>())
            .field("cache", &self.cache)
            .field("rate_limits", &self.rate_limits)
            .field("retry", &self.retry)
            .finish()
    }
}

pub struct BackendClientBuilder {
    http: Option<Arc<dyn Transport>>,
    mocks: HashMap<String, Arc<MockBackend>>,
    cache_dir: Option<PathBuf>,
    transcript_path: Option<PathBuf>,
    rate_limits: HashMap<String, u32>,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    env: Box<EnvLookup>,
}

impl Default for BackendClientBuilder {
    fn default() -> Self {
        Self {
            http: None,
            mocks: HashMap::new(),
            cache_dir: None,
            transcript_path: None,
            rate_limits: HashMap::new(),
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock::new()),
            env: Box::new(|k| std::env::var(k).ok()),
        }
    }
}

impl BackendClientBuilder {
    pub fn mock(mut self, script_id: impl Into<String>, mock: MockBackend) -> Self {
        self.mocks.insert(script_id.into(), Arc::new(mock));
        self
    }

    pub fn http_transport(mut self, t: Arc<dyn Transport>) -> Self {
        self.http = Some(t);
        self
    }

    pub fn cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn transcript_file(mut self, path: impl Into<PathBuf>) -> Self {
        self.transcript_path = Some(path.into());
        self
    }

    /// Requests per second allowed for one backend id.
    pub fn rate_limit(mut self, backend_id: impl Into<String>, per_second: u32) -> Self {
        self.rate_limits.insert(backend_id.into(), per_second);
        self
    }

    pub fn retry(mut self, policy: RetryPolicy) -> Self {
        self.retry = policy;
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn env(mut self, lookup: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        self.env = Box::new(lookup);
        self
    }

    pub fn build(self) -> Result<BackendClient, BackendError> {
        let cache = match self.cache_dir {
            Some(dir) => Some(ResponseCache::open(dir).map_err(|e| BackendError::Storage(e.to_string()))?),
            None => None,
        };
        let transcript = match self.transcript_path {
            Some(p) => Transcript::to_file(p).map_err(|e| BackendError::Storage(e.to_string()))?,
            None => Transcript::in_memory(),
        };
        Ok(BackendClient {
            http: self.http.unwrap_or_else(|| Arc::new(HttpTransport::default())),
            mocks: self.mocks,
            cache,
            transcript,
            rate_limits: self.rate_limits,
            limiters: Mutex::new(HashMap::new()),
            inflight: Mutex::new(HashMap::new()),
            retry: self.retry,
            clock: self.clock,
            env: self.env,
        })
    }
}

impl BackendClient {
    pub fn builder() -> BackendClientBuilder {
        BackendClientBuilder::default()
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    pub fn has_mock(&self, script_id: &str) -> bool {
        self.mocks.contains_key(script_id)
    }

    fn limiter(&self, backend_id: &str) -> Option<Arc<RateLimiter>> {
        let per_second = *self.rate_limits.get(backend_id)?;
        let mut map = self.limiters.lock().expect("limiter map poisoned");
        Some(
            map.entry(backend_id.to_string())
                .or_insert_with(|| Arc::new(RateLimiter::new(per_second)))
                .clone(),
        )
    }

    /// Sends a request, consulting the cache first. With a cache, concurrent
    /// identical requests are serialized so that only the first reaches the
    /// backend.
    pub fn invoke(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        req.check_capability()?;
        let digest = request_digest(req);
        if self.cache.is_none() {
            return self.invoke_digest(req, digest);
        }
        let slot = self
            .inflight
            .lock()
            .expect("inflight map poisoned")
            .entry(digest.0.clone())
            .or_default()
            .clone();
        let result = {
            let _guard = slot.lock().unwrap_or_else(|e| e.into_inner());
            self.invoke_digest(req, digest.clone())
        };
        let mut map = self.inflight.lock().expect("inflight map poisoned");
        // Two references left: the map's and ours. Nobody else is waiting.
        if Arc::strong_count(&slot) == 2 {
            map.remove(&digest.0);
        }
        result
    }

    fn invoke_digest(&self, req: &ModelRequest, digest: CacheKey) -> Result<ModelResponse, BackendError> {
        let started = self.clock.now();

        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&digest) {
                let latency = self.clock.now().saturating_sub(started);
                return Ok(ModelResponse {
                    text: hit.text,
                    latency_ms: latency.as_millis() as u64,
                    from_cache: true,
                    attempt_count: 1,
                });
            }
        }

        let transport: Arc<dyn Transport> = match req.binding.mock_script_id() {
            Some(id) => self
                .mocks
                .get(id)
                .cloned()
                .map(|m| m as Arc<dyn Transport>)
                .ok_or_else(|| BackendError::MockScriptNotLoaded { script_id: id.to_string() })?,
            None => self.http.clone(),
        };
        let bearer = match (&req.binding.auth_ref, req.binding.mock_script_id()) {
            (Some(var), None) => Some((self.env)(var).ok_or_else(|| BackendError::AuthMissing {
                backend_id: req.binding.backend_id.clone(),
                var: var.clone(),
            })?),
            _ => None,
        };

        let limiter = self.limiter(&req.binding.backend_id);
        let mut attempts = 0u32;
        let outcome = loop {
            attempts += 1;
            if let Some(l) = &limiter {
                l.acquire(self.clock.as_ref());
            }
            match transport.send(req, &digest, bearer.as_deref()) {
                Ok(text) => break Ok(text),
                Err(TransportError::Retryable(msg)) => {
                    if attempts >= self.retry.max_attempts {
                        break Err(BackendError::RetriesExhausted {
                            attempts,
                            last_error: msg,
                        });
                    }
                    log::debug!("{}: attempt {attempts} failed: {msg}", req.tag);
                    self.clock.sleep(self.retry.backoff(attempts));
                }
                Err(TransportError::Fatal(msg)) => break Err(BackendError::Rejected(msg)),
                Err(TransportError::Unscripted) => {
                    break Err(BackendError::MockUnscripted {
                        digest: digest.0.clone(),
                        tag: req.tag.clone(),
                    })
                }
            }
        };
        let latency_ms = self.clock.now().saturating_sub(started).as_millis() as u64;

        self.transcript
            .append(TranscriptRecord {
                timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                tag: req.tag.clone(),
                digest: digest.0.clone(),
                backend_id: req.binding.backend_id.clone(),
                prompt: req.prompt_text.clone(),
                response: outcome.as_ref().ok().cloned(),
                error: outcome.as_ref().err().map(|e| e.to_string()),
                latency_ms,
                attempts,
            })
            .map_err(|e| BackendError::Storage(e.to_string()))?;

        let text = outcome?;
        if let Some(cache) = &self.cache {
            cache
                .put(
                    &digest,
                    &CachedEntry {
                        digest: digest.0.clone(),
                        backend_id: req.binding.backend_id.clone(),
                        model_id: req.binding.model_id.clone(),
                        text: text.clone(),
                        latency_ms,
                        attempts,
                    },
                )
                .map_err(|e| BackendError::Storage(e.to_string()))?;
        }
        Ok(ModelResponse {
            text,
            latency_ms,
            from_cache: false,
            attempt_count: attempts,
        })
    }
}
