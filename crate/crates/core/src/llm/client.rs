use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::LlmError;

/// Environment variable holding the bearer token for the chat endpoint.
pub const API_KEY_ENV: &str = "DIVESOUND_LLM_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// Temperature 0, as every request of the pipeline uses.
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>, seed: Option<u64>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: 0.0,
            seed,
        }
    }

    /// Compact JSON with object keys sorted at every level.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        canonical_string(&value)
    }

    /// SHA-256 of [`ChatRequest::canonical_json`], lowercase hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

fn canonical_string(value: &Value) -> String {
    fn write(value: &Value, out: &mut String) {
        match value {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort_unstable();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&Value::String(k.clone()).to_string());
                    out.push(':');
                    write(&map[k], out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            scalar => out.push_str(&scalar.to_string()),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

/// One recorded request/response exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmTranscript {
    pub request_hash: String,
    pub request: ChatRequest,
    pub response: String,
    pub model_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl LlmTranscript {
    pub fn verify(&self) -> Result<(), LlmError> {
        let actual = self.request.hash();
        if actual != self.request_hash {
            return Err(LlmError::CorruptTranscript(format!(
                "stored hash {} does not match request hash {actual}",
                self.request_hash
            )));
        }
        Ok(())
    }
}

/// Text of a completion and the model that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub content: String,
    pub model_id: String,
}

/// Anything that answers chat requests: the HTTP endpoint, a replay store,
/// or a wrapper around either.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError>;
}

/// Directory of `<request_hash>.json` transcripts.
#[derive(Debug, Clone)]
pub struct ReplayStore {
    dir: PathBuf,
}

impl ReplayStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(LlmError::Io {
                path: dir.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "replay directory does not exist"),
            });
        }
        Ok(Self { dir })
    }

    /// Like [`ReplayStore::open`] but creates the directory first.
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| LlmError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn get(&self, hash: &str) -> Result<Option<LlmTranscript>, LlmError> {
        let path = self.path_for(hash);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => {
                return Err(LlmError::Io {
                    path: path.display().to_string(),
                    source: e,
                })
            }
        };
        let t: LlmTranscript = serde_json::from_str(&text)
            .map_err(|e| LlmError::CorruptTranscript(format!("{}: {e}", path.display())))?;
        if t.request_hash != hash {
            return Err(LlmError::CorruptTranscript(format!(
                "{} holds transcript {}",
                path.display(),
                t.request_hash
            )));
        }
        t.verify()?;
        Ok(Some(t))
    }

    /// Write through a temporary file in the same directory, so concurrent
    /// writers of distinct hashes never see partial files.
    pub fn put(&self, transcript: &LlmTranscript) -> Result<PathBuf, LlmError> {
        transcript.verify()?;
        let path = self.path_for(&transcript.request_hash);
        let io = |e: std::io::Error| LlmError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let mut text = serde_json::to_string_pretty(transcript).expect("transcript serializes");
        text.push('\n');
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io)?;
        std::io::Write::write_all(&mut tmp, text.as_bytes()).map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(path)
    }
}

impl ChatBackend for ReplayStore {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        let hash = request.hash();
        match self.get(&hash)? {
            Some(t) => Ok(Completion {
                content: t.response,
                model_id: t.model_id,
            }),
            None => Err(LlmError::ReplayMiss(hash)),
        }
    }
}

/// Passes requests to `inner` and stores every exchange in `store`.
pub struct RecordingClient<B> {
    inner: B,
    store: ReplayStore,
    fixed_timestamp: Option<u64>,
}

impl<B: ChatBackend> RecordingClient<B> {
    pub fn new(inner: B, store: ReplayStore) -> Self {
        Self {
            inner,
            store,
            fixed_timestamp: None,
        }
    }

    /// Stamp every transcript with `ts` instead of the wall clock, for
    /// reproducible fixture files.
    pub fn with_fixed_timestamp(mut self, ts: u64) -> Self {
        self.fixed_timestamp = Some(ts);
        self
    }
}

impl<B: ChatBackend> ChatBackend for RecordingClient<B> {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        let completion = self.inner.complete(request)?;
        let timestamp = self.fixed_timestamp.unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        self.store.put(&LlmTranscript {
            request_hash: request.hash(),
            request: request.clone(),
            response: completion.content.clone(),
            model_id: completion.model_id.clone(),
            timestamp,
        })?;
        Ok(completion)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Attempts after the first one.
    pub max_retries: u32,
    /// Delay before the first retry; doubled for each further retry.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay_before_retry(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << retry.min(31))
    }
}

/// Client for `POST {base_url}/chat/completions`.
pub struct HttpChatClient {
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    http: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct CompletionBody {
    #[serde(default)]
    model: Option<String>,
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Attempt {
    Retry(String),
    Fatal(LlmError),
}

impl HttpChatClient {
    /// The bearer token is read from `DIVESOUND_LLM_API_KEY` if set.
    pub fn new(base_url: impl Into<String>) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| LlmError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            retry: RetryPolicy::default(),
            http,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn attempt(&self, request: &ChatRequest) -> Result<Completion, Attempt> {
        let mut call = self
            .http
            .post(format!("{}/chat/completions", self.base_url))
            .json(request);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(LlmError::Status {
                status: status.as_u16(),
                body,
            }));
        }
        let body: CompletionBody = resp
            .json()
            .map_err(|e| Attempt::Fatal(LlmError::BadCompletion(e.to_string())))?;
        let content = body
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal(LlmError::BadCompletion("no message content in choices".into())))?;
        Ok(Completion {
            content,
            model_id: body.model.unwrap_or_else(|| request.model.clone()),
        })
    }
}

impl ChatBackend for HttpChatClient {
    /// Transport errors, 429 and 5xx are retried with exponential backoff.
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        let mut last = String::new();
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay_before_retry(attempt - 1));
            }
            match self.attempt(request) {
                Ok(c) => return Ok(c),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(LlmError::Transport {
            attempts: self.retry.max_retries + 1,
            message: last,
        })
    }
}
