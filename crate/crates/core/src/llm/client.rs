//! Completion requests, the provider interface, the JSONL cassette store
//! and the live/record/replay client.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ENV_BASE_URL: &str = "CAPSIM_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "CAPSIM_LLM_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("provider unreachable after {attempts} attempt(s): {message}")]
    ProviderUnreachable { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("no cassette record for request {hash}")]
    ReplayMiss { hash: String },
    #[error("provider returned HTTP {status}: {message}")]
    Provider { status: u16, message: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("mode `{0}` needs a provider but none is configured")]
    NoProvider(Mode),
    #[error("cassette {path}, line {line}: {message}")]
    Cassette { path: String, line: usize, message: String },
    #[error("cassette {path}: {source}")]
    CassetteIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, model: impl Into<String>, temperature: f64) -> Self {
        CompletionRequest { prompt: prompt.into(), model: model.into(), temperature, max_tokens: None }
    }

    /// Hex SHA-256 over model, temperature and prompt.
    pub fn hash(&self) -> String {
        request_hash(&self.model, self.temperature, &self.prompt)
    }
}

pub fn request_hash(model: &str, temperature: f64, prompt: &str) -> String {
    let mut h = Sha256::new();
    for part in [model, &format!("{temperature:?}"), prompt] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub hash: String,
    pub model: String,
    pub temperature: f64,
    pub prompt: String,
    pub response: String,
    pub timestamp: String,
}

impl CompletionRecord {
    pub fn new(req: &CompletionRequest, response: impl Into<String>) -> Self {
        CompletionRecord {
            hash: req.hash(),
            model: req.model.clone(),
            temperature: req.temperature,
            prompt: req.prompt.clone(),
            response: response.into(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}

/// Anything that turns a request into response text.
pub trait Provider: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError>;
}

/// Provider backed by a closure. Handy for tests and offline tooling.
pub struct FnProvider<F>(pub F);

impl<F> Provider for FnProvider<F>
where
    F: Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        (self.0)(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1));
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

/// OpenAI-compatible chat-completions endpoint.
pub struct HttpProvider {
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    /// Total 429 retries allowed across all requests of this provider.
    rate_limit_budget: AtomicU32,
    client: reqwest::blocking::Client,
}

impl fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpProvider")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("retry", &self.retry)
            .finish()
    }
}

impl HttpProvider {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, retry: RetryPolicy) -> Self {
        let client =
            reqwest::blocking::Client::builder().timeout(Duration::from_secs(300)).build().expect("HTTP client builds");
        HttpProvider {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            retry,
            rate_limit_budget: AtomicU32::new(64),
            client,
        }
    }

    /// Reads the endpoint and key from the environment. `None` when no
    /// endpoint is set.
    pub fn from_env(retry: RetryPolicy) -> Option<Self> {
        let url = std::env::var(ENV_BASE_URL).ok().filter(|s| !s.is_empty())?;
        let key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        Some(HttpProvider::new(url, key, retry))
    }

    pub fn with_rate_limit_budget(self, retries: u32) -> Self {
        self.rate_limit_budget.store(retries, Ordering::SeqCst);
        self
    }

    fn body(req: &CompletionRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": req.model,
            "temperature": req.temperature,
            "messages": [{"role": "user", "content": req.prompt}],
        });
        if let Some(n) = req.max_tokens {
            body["max_tokens"] = n.into();
        }
        body
    }

    fn extract_text(v: &serde_json::Value) -> Result<String, LlmError> {
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| LlmError::MalformedResponse("missing choices[0].message.content".into()))
    }
}

impl Provider for HttpProvider {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let url = format!("{}/chat/completions", self.base_url);
        let body = Self::body(req);
        let mut last_error = String::new();
        let mut rate_limited = false;
        for attempt in 1..=self.retry.max_attempts.max(1) {
            if attempt > 1 {
                std::thread::sleep(self.retry.backoff(attempt - 1));
            }
            let mut call = self.client.post(&url).json(&body);
            if let Some(key) = &self.api_key {
                call = call.bearer_auth(key);
            }
            let resp = match call.send() {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("attempt {attempt}: {e}");
                    last_error = e.to_string();
                    rate_limited = false;
                    continue;
                }
            };
            let status = resp.status();
            if status.as_u16() == 429 {
                rate_limited = true;
                let left =
                    self.rate_limit_budget.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| b.checked_sub(1));
                if left.is_err() {
                    return Err(LlmError::RateLimited { attempts: attempt });
                }
                continue;
            }
            if status.is_server_error() {
                last_error = format!("HTTP {status}");
                rate_limited = false;
                continue;
            }
            if !status.is_success() {
                let text = resp.text().unwrap_or_default();
                return Err(LlmError::Provider { status: status.as_u16(), message: text.chars().take(300).collect() });
            }
            let v: serde_json::Value = resp.json().map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
            return Self::extract_text(&v);
        }
        let attempts = self.retry.max_attempts.max(1);
        if rate_limited {
            Err(LlmError::RateLimited { attempts })
        } else {
            Err(LlmError::ProviderUnreachable { attempts, message: last_error })
        }
    }
}

/// Records keyed by request hash, optionally backed by a JSONL file.
/// Reads take a shared lock; appends are serialized.
pub struct CassetteStore {
    path: Option<PathBuf>,
    records: RwLock<HashMap<String, CompletionRecord>>,
    writer: Mutex<Option<File>>,
}

impl CassetteStore {
    pub fn in_memory() -> Self {
        CassetteStore { path: None, records: RwLock::new(HashMap::new()), writer: Mutex::new(None) }
    }

    /// Loads an existing cassette. Later lines win over earlier ones with
    /// the same hash.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let io_err = |source| LlmError::CassetteIo { path: path.display().to_string(), source };
        let file = File::open(path).map_err(io_err)?;
        let mut records = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CompletionRecord = serde_json::from_str(&line).map_err(|e| LlmError::Cassette {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            records.insert(rec.hash.clone(), rec);
        }
        Ok(CassetteStore { path: Some(path.to_path_buf()), records: RwLock::new(records), writer: Mutex::new(None) })
    }

    /// Loads the cassette if present, otherwise starts an empty one that
    /// will be created on the first append.
    pub fn open_or_create(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        if path.exists() {
            Self::load(path)
        } else {
            Ok(CassetteStore {
                path: Some(path.to_path_buf()),
                records: RwLock::new(HashMap::new()),
                writer: Mutex::new(None),
            })
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, hash: &str) -> Option<CompletionRecord> {
        self.records.read().get(hash).cloned()
    }

    /// Appends one line to the file (if any) and updates the index.
    pub fn insert(&self, rec: CompletionRecord) -> Result<(), LlmError> {
        let mut writer = self.writer.lock();
        if let Some(path) = &self.path {
            let io_err = |source| LlmError::CassetteIo { path: path.display().to_string(), source };
            if writer.is_none() {
                let f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
                *writer = Some(f);
            }
            let f = writer.as_mut().expect("writer opened above");
            let mut line = serde_json::to_string(&rec).expect("record serializes");
            line.push('\n');
            f.write_all(line.as_bytes()).map_err(io_err)?;
            f.flush().map_err(io_err)?;
        }
        self.records.write().insert(rec.hash.clone(), rec);
        Ok(())
    }

    /// All records, sorted by hash.
    pub fn records(&self) -> Vec<CompletionRecord> {
        let mut v: Vec<_> = self.records.read().values().cloned().collect();
        v.sort_by(|a, b| a.hash.cmp(&b.hash));
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    Record,
    #[default]
    Replay,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Live => "live",
            Mode::Record => "record",
            Mode::Replay => "replay",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(Mode::Live),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            other => Err(format!("unknown mode `{other}` (live, record, replay)")),
        }
    }
}

/// Counting semaphore bounding requests in flight.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

/// Dispatches requests according to [`Mode`].
///
/// * `Live` calls the provider.
/// * `Record` calls the provider and appends the record to the cassette.
/// * `Replay` answers from the cassette and never touches the provider.
pub struct LlmClient {
    mode: Mode,
    provider: Option<Arc<dyn Provider>>,
    cassette: Arc<CassetteStore>,
    gate: Gate,
    provider_calls: AtomicU32,
}

impl LlmClient {
    pub fn new(mode: Mode, provider: Option<Arc<dyn Provider>>, cassette: Arc<CassetteStore>) -> Self {
        LlmClient {
            mode,
            provider,
            cassette,
            gate: Gate { free: Mutex::new(4), cv: Condvar::new() },
            provider_calls: AtomicU32::new(0),
        }
    }

    pub fn replay(cassette: Arc<CassetteStore>) -> Self {
        LlmClient::new(Mode::Replay, None, cassette)
    }

    pub fn with_max_in_flight(self, n: usize) -> Self {
        *self.gate.free.lock() = n.max(1);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn cassette(&self) -> &CassetteStore {
        &self.cassette
    }

    /// Number of requests that reached the provider.
    pub fn provider_calls(&self) -> u32 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        if self.mode == Mode::Replay {
            let hash = req.hash();
            return self.cassette.get(&hash).map(|r| r.response).ok_or(LlmError::ReplayMiss { hash });
        }
        let provider = self.provider.as_ref().ok_or(LlmError::NoProvider(self.mode))?;
        let text = {
            let _slot = self.gate.acquire();
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            provider.complete(req)?
        };
        if self.mode == Mode::Record {
            self.cassette.insert(CompletionRecord::new(req, text.clone()))?;
        }
        Ok(text)
    }
}
