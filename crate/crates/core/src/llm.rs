//! Chat-completion client with transcript record and replay.
//!
//! Three interchangeable backends sit behind [`LlmClient`]: an HTTP backend
//! speaking the ubiquitous chat-completions wire shape, a scripted backend
//! that fabricates deterministic responses for offline runs, and a replay
//! backend that serves a recorded transcript back, failing loudly on any
//! divergence. Every completed call is appended to the active transcript, so
//! a recorded search can be re-run bit-exactly with no network.

use crate::space::DesignSpace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// One chat-completion request. The message list starts with a system message
/// and ends with the single user message of the current episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl LlmRequest {
    pub fn chat(model_id: impl Into<String>, system: impl Into<String>, user: impl Into<String>) -> Self {
        LlmRequest {
            model_id: model_id.into(),
            messages: vec![
                Message { role: Role::System, content: system.into() },
                Message { role: Role::User, content: user.into() },
            ],
            temperature: 0.0,
            max_tokens: 512,
        }
    }

    /// Content digest over the canonical JSON form; keys requests stable
    /// across runs for replay matching.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("request serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex::encode(hasher.finalize())
    }

    fn check(&self) -> Result<(), LlmError> {
        match self.messages.first() {
            Some(m) if m.role == Role::System => {}
            _ => return Err(LlmError::BadRequest("first message must be system".into())),
        }
        match self.messages.last() {
            Some(m) if m.role == Role::User => {}
            _ => return Err(LlmError::BadRequest("last message must be user".into())),
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::BadRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

pub const TRANSCRIPT_SCHEMA: &str = "cimnas.transcript.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request_digest: String,
    pub response_text: String,
    pub timestamp_ms: u64,
}

/// Ordered record of prompt/response exchanges.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TranscriptHeader {
    schema: String,
}

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("io error on transcript: {0}")]
    Io(#[from] std::io::Error),
    #[error("transcript header is `{found}`, expected schema {TRANSCRIPT_SCHEMA}")]
    BadHeader { found: String },
    #[error("transcript line {line}: {err}")]
    BadLine { line: usize, err: String },
}

impl Transcript {
    /// Persists as line-delimited records behind a schema header line.
    pub fn save(&self, path: &Path) -> Result<(), TranscriptError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            out,
            "{}",
            serde_json::to_string(&TranscriptHeader { schema: TRANSCRIPT_SCHEMA.into() })
                .expect("header serializes")
        )?;
        for e in &self.entries {
            writeln!(out, "{}", serde_json::to_string(e).expect("entry serializes"))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Inverse of [`Transcript::save`].
    pub fn load(path: &Path) -> Result<Transcript, TranscriptError> {
        let file = std::fs::File::open(path)?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header_line = match lines.next() {
            Some(line) => line?,
            None => return Ok(Transcript::default()),
        };
        let header: TranscriptHeader =
            serde_json::from_str(&header_line).map_err(|_| TranscriptError::BadHeader {
                found: header_line.clone(),
            })?;
        if header.schema != TRANSCRIPT_SCHEMA {
            return Err(TranscriptError::BadHeader { found: header.schema });
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry =
                serde_json::from_str(&line).map_err(|e| TranscriptError::BadLine {
                    line: i + 2,
                    err: e.to_string(),
                })?;
            entries.push(entry);
        }
        Ok(Transcript { entries })
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("authentication failed (HTTP {status})")]
    Auth { status: u16 },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("malformed endpoint reply: {0}")]
    MalformedReply(String),
    #[error("replay transcript exhausted at entry {index}")]
    ReplayExhausted { index: usize },
    #[error("replay divergence at entry {index}: recorded digest {expected}, request digest {got}")]
    ReplayDivergence {
        index: usize,
        expected: String,
        got: String,
    },
    #[error("transcript error: {0}")]
    Transcript(#[from] TranscriptError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A completion source. Implementations must not mutate the request.
pub trait LlmBackend {
    fn complete(&mut self, req: &LlmRequest) -> Result<String, LlmError>;
    fn label(&self) -> &'static str;
}

/// Live endpoint speaking the chat-completions shape: one POST per
/// completion, bearer credential, exponential backoff on transport failures
/// and retryable statuses.
pub struct HttpBackend {
    endpoint: String,
    credential: Option<String>,
    max_retries: u32,
    retry_base: Duration,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, credential: Option<String>, max_retries: u32) -> Self {
        HttpBackend {
            endpoint: endpoint.into(),
            credential,
            max_retries,
            retry_base: Duration::from_millis(500),
            client: reqwest::blocking::Client::new(),
        }
    }

    /// Shrinks the backoff base; test hook.
    pub fn with_retry_base(mut self, base: Duration) -> Self {
        self.retry_base = base;
        self
    }

    fn extract_content(body: &str) -> Result<String, LlmError> {
        let value: serde_json::Value = serde_json::from_str(body)
            .map_err(|e| LlmError::MalformedReply(format!("not JSON: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| {
                LlmError::MalformedReply("missing choices[0].message.content".to_string())
            })
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&mut self, req: &LlmRequest) -> Result<String, LlmError> {
        let body = WireRequest {
            model: &req.model_id,
            messages: &req.messages,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        };
        let mut last_err = String::new();
        let attempts = self.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry_base * 2u32.pow(attempt - 1));
            }
            let mut request = self.client.post(&self.endpoint).json(&body);
            if let Some(credential) = &self.credential {
                request = request.bearer_auth(credential);
            }
            match request.send() {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.text().unwrap_or_default();
                    match status {
                        200..=299 => return Self::extract_content(&text),
                        401 | 403 => return Err(LlmError::Auth { status }),
                        429 | 500..=599 => {
                            last_err = format!("HTTP {status}");
                        }
                        _ => return Err(LlmError::Http { status, body: text }),
                    }
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(LlmError::Exhausted {
            attempts,
            last: last_err,
        })
    }

    fn label(&self) -> &'static str {
        "http"
    }
}

/// Deterministic offline stand-in for a live model: replies with a valid
/// random rollout in one of a few phrasings, plus an occasional unparseable
/// reply to exercise the re-prompt path.
pub struct ScriptedBackend {
    space: DesignSpace,
    rng: ChaCha8Rng,
    /// Every n-th call returns prose without a list (0 = never).
    flake_every: usize,
    calls: usize,
}

impl ScriptedBackend {
    pub fn new(space: DesignSpace, seed: u64) -> Self {
        ScriptedBackend {
            space,
            rng: ChaCha8Rng::seed_from_u64(seed),
            flake_every: 0,
            calls: 0,
        }
    }

    pub fn with_flake_every(mut self, n: usize) -> Self {
        self.flake_every = n;
        self
    }

    fn random_rollout(&mut self) -> crate::space::Rollout {
        let layers = self
            .space
            .layers
            .iter()
            .map(|lc| crate::space::LayerPick {
                channels: lc.channel_options[self.rng.random_range(0..lc.channel_options.len())],
                kernel: lc.kernel_options[self.rng.random_range(0..lc.kernel_options.len())],
            })
            .collect();
        let hw = &self.space.hardware;
        crate::space::Rollout {
            layers,
            hardware: crate::space::HardwarePick {
                crossbar_size: hw.crossbar_sizes[self.rng.random_range(0..hw.crossbar_sizes.len())],
                adc_resolution: hw.adc_resolutions[self.rng.random_range(0..hw.adc_resolutions.len())],
                device_precision: hw.device_precisions
                    [self.rng.random_range(0..hw.device_precisions.len())],
            },
        }
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&mut self, _req: &LlmRequest) -> Result<String, LlmError> {
        self.calls += 1;
        if self.flake_every > 0 && self.calls % self.flake_every == 0 {
            return Ok("I cannot provide a suggestion right now.".to_string());
        }
        let rollout = self.random_rollout().to_bracket_string();
        let text = match self.rng.random_range(0..4u32) {
            0 => rollout,
            1 => format!("Sure! My suggestion is {rollout}."),
            2 => format!("```\n{rollout}\n```"),
            _ => format!("Based on the results so far, try:\n{rollout}"),
        };
        Ok(text)
    }

    fn label(&self) -> &'static str {
        "scripted"
    }
}

/// Serves a recorded transcript strictly in order, verifying that each
/// incoming request digest matches the recorded one.
pub struct ReplayBackend {
    entries: Vec<TranscriptEntry>,
    cursor: usize,
}

impl ReplayBackend {
    pub fn new(transcript: Transcript) -> Self {
        ReplayBackend {
            entries: transcript.entries,
            cursor: 0,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(Transcript::load(path)?))
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.cursor
    }
}

impl LlmBackend for ReplayBackend {
    fn complete(&mut self, req: &LlmRequest) -> Result<String, LlmError> {
        let index = self.cursor;
        let entry = self
            .entries
            .get(index)
            .ok_or(LlmError::ReplayExhausted { index })?;
        let got = req.digest();
        if got != entry.request_digest {
            return Err(LlmError::ReplayDivergence {
                index,
                expected: entry.request_digest.clone(),
                got,
            });
        }
        self.cursor += 1;
        Ok(entry.response_text.clone())
    }

    fn label(&self) -> &'static str {
        "replay"
    }
}

/// Wraps a backend and appends every completed call to the active transcript,
/// optionally persisting each entry immediately.
pub struct LlmClient {
    backend: Box<dyn LlmBackend>,
    transcript: Transcript,
    persist_to: Option<PathBuf>,
}

impl LlmClient {
    pub fn new(backend: Box<dyn LlmBackend>) -> Self {
        LlmClient {
            backend,
            transcript: Transcript::default(),
            persist_to: None,
        }
    }

    /// Appends each entry to `path` as it happens (header written up front),
    /// so a crashed run still leaves a usable transcript.
    pub fn with_persistence(mut self, path: PathBuf) -> Result<Self, LlmError> {
        self.transcript.save(&path)?;
        self.persist_to = Some(path);
        Ok(self)
    }

    pub fn backend_label(&self) -> &'static str {
        self.backend.label()
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    pub fn complete(&mut self, req: &LlmRequest) -> Result<String, LlmError> {
        req.check()?;
        let response_text = self.backend.complete(req)?;
        let entry = TranscriptEntry {
            request_digest: req.digest(),
            response_text: response_text.clone(),
            timestamp_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        };
        if let Some(path) = &self.persist_to {
            let mut out = std::fs::OpenOptions::new().append(true).open(path)?;
            writeln!(out, "{}", serde_json::to_string(&entry).expect("entry serializes"))?;
        }
        self.transcript.entries.push(entry);
        Ok(response_text)
    }
}
