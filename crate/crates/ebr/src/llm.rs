//! HTTP backend for OpenAI-compatible chat-completions endpoints.
//!
//! Requests are sent one prompt per call as a single user-role message.
//! Responses are cached in a content-addressed directory keyed by
//! (model, prompt, temperature, max_tokens); re-running an experiment
//! over a warm cache issues no network traffic. Prompt and response
//! text is never logged.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rescale::{BackendError, ScoreRequest, ScoringBackend};

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid backend config: {0}")]
    BadConfig(String),
    #[error("api key not found: set the {env_var} environment variable")]
    MissingApiKey { env_var: String },
    #[error("authentication rejected by server (HTTP {status})")]
    AuthRejected { status: u16 },
    #[error("request failed with HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last_error}")]
    RetriesExhausted { attempts: u32, last_error: String },
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
    #[error("cache error at {path}: {source}")]
    Cache {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Whether cached responses may satisfy requests. Write-only mode is for
/// stability runs: every request goes to the network, but responses are
/// still persisted for audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    ReadWrite,
    WriteOnly,
}

/// Connection and decoding parameters for a live backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_response_tokens: u32,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    pub concurrency_limit: usize,
    pub cache_dir: PathBuf,
    pub cache_mode: CacheMode,
    pub api_key_env: String,
    /// First retry delay; doubles per attempt with up to 50% jitter.
    #[serde(with = "duration_millis")]
    pub retry_initial_backoff: Duration,
}

mod duration_secs {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_secs())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs(u64::deserialize(d)?))
    }
}

mod duration_millis {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4-0613".into(),
            temperature: 0.0,
            max_response_tokens: 200,
            timeout: Duration::from_secs(60),
            max_retries: 4,
            concurrency_limit: 4,
            cache_dir: PathBuf::from("llm-cache"),
            cache_mode: CacheMode::ReadWrite,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            retry_initial_backoff: Duration::from_millis(500),
        }
    }
}

/// One persisted response. `created_at` (unix seconds) is metadata only:
/// it is excluded from the cache key, so identical requests always map
/// to the same entry regardless of when they ran.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub response_text: String,
    pub created_at: u64,
}

/// Cache key: hash of exactly the request fields that determine the
/// response under a deterministic decoder.
fn cache_key(model: &str, prompt: &str, temperature: f64, max_tokens: u32) -> String {
    #[derive(Serialize)]
    struct KeyFields<'a> {
        model: &'a str,
        prompt: &'a str,
        temperature: f64,
        max_tokens: u32,
    }
    let canonical = serde_json::to_vec(&KeyFields {
        model,
        prompt,
        temperature,
        max_tokens,
    })
    .expect("key fields serialize");
    hex::encode(Sha256::digest(&canonical))
}

fn entry_path(cache_dir: &Path, key: &str) -> PathBuf {
    cache_dir.join(&key[..2]).join(format!("{key}.json"))
}

/// Counting semaphore bounding in-flight requests process-wide.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().expect("semaphore poisoned");
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

/// Session cache counters plus on-disk totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
    pub hits: u64,
    pub misses: u64,
}

/// Scans a cache directory for entry counts and sizes. Hits and misses
/// are per-session numbers and read zero here; use
/// [`LlmClient::stats`] for a live session.
pub fn cache_stats(cache_dir: &Path) -> Result<CacheStats, LlmError> {
    let mut stats = CacheStats::default();
    if !cache_dir.exists() {
        return Ok(stats);
    }
    let map_err = |source| LlmError::Cache {
        path: cache_dir.to_path_buf(),
        source,
    };
    for shard in fs::read_dir(cache_dir).map_err(map_err)? {
        let shard = shard.map_err(map_err)?;
        if !shard.file_type().map_err(map_err)?.is_dir() {
            continue;
        }
        for entry in fs::read_dir(shard.path()).map_err(map_err)? {
            let entry = entry.map_err(map_err)?;
            let metadata = entry.metadata().map_err(map_err)?;
            if metadata.is_file() && entry.path().extension().is_some_and(|e| e == "json") {
                stats.entries += 1;
                stats.bytes += metadata.len();
            }
        }
    }
    Ok(stats)
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

/// Live scoring backend over an OpenAI-compatible endpoint.
///
/// Shareable across threads; the configured concurrency limit is
/// enforced with a semaphore around the HTTP call, and the cache
/// tolerates concurrent writers (atomic rename, last write wins with
/// identical values by construction).
pub struct LlmClient {
    config: BackendConfig,
    http: reqwest::blocking::Client,
    semaphore: Semaphore,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl LlmClient {
    pub fn new(config: BackendConfig) -> Result<Self, LlmError> {
        if config.temperature < 0.0 {
            return Err(LlmError::BadConfig(format!(
                "temperature must be >= 0, got {}",
                config.temperature
            )));
        }
        if config.concurrency_limit == 0 {
            return Err(LlmError::BadConfig("concurrency_limit must be >= 1".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::BadConfig(e.to_string()))?;
        Ok(LlmClient {
            semaphore: Semaphore::new(config.concurrency_limit),
            http,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            config,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// On-disk totals plus this session's hit/miss counters.
    pub fn stats(&self) -> Result<CacheStats, LlmError> {
        let mut stats = cache_stats(&self.config.cache_dir)?;
        stats.hits = self.hits.load(Ordering::SeqCst);
        stats.misses = self.misses.load(Ordering::SeqCst);
        Ok(stats)
    }

    fn read_cache(&self, key: &str) -> Option<String> {
        if self.config.cache_mode == CacheMode::WriteOnly {
            return None;
        }
        let path = entry_path(&self.config.cache_dir, key);
        let text = fs::read_to_string(path).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        Some(entry.response_text)
    }

    fn write_cache(&self, key: &str, response_text: &str) -> Result<(), LlmError> {
        let path = entry_path(&self.config.cache_dir, key);
        let dir = path.parent().expect("entry path has a shard directory");
        fs::create_dir_all(dir).map_err(|source| LlmError::Cache {
            path: dir.to_path_buf(),
            source,
        })?;
        let entry = CacheEntry {
            key: key.to_string(),
            response_text: response_text.to_string(),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let tmp = dir.join(format!(
            ".{key}.{}.tmp",
            std::process::id()
        ));
        let body = serde_json::to_vec(&entry).expect("entry serializes");
        fs::write(&tmp, body).map_err(|source| LlmError::Cache {
            path: tmp.clone(),
            source,
        })?;
        fs::rename(&tmp, &path).map_err(|source| LlmError::Cache {
            path: path.clone(),
            source,
        })
    }

    fn backoff_delay(&self, attempt: u32) -> Duration {
        let base = self.config.retry_initial_backoff.as_secs_f64() * 2f64.powi(attempt as i32);
        let jitter = rand::thread_rng().gen_range(0.0..0.5);
        Duration::from_secs_f64(base * (1.0 + jitter))
    }

    fn send_once(&self, api_key: &str, prompt: &str) -> Result<String, LlmError> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let request = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.config.temperature,
            max_tokens: self.config.max_response_tokens,
        };
        let response = self
            .http
            .post(url)
            .bearer_auth(api_key)
            .json(&request)
            .send()
            .map_err(|e| LlmError::Http {
                status: 0,
                body: e.to_string(),
            })?;
        let status = response.status().as_u16();
        if status == 401 || status == 403 {
            return Err(LlmError::AuthRejected { status });
        }
        let body = response.text().map_err(|e| LlmError::Http {
            status,
            body: e.to_string(),
        })?;
        if status != 200 {
            return Err(LlmError::Http { status, body });
        }
        let parsed: ChatResponse = serde_json::from_str(&body)
            .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedResponse("empty choices array".into()))
    }

    fn retryable(error: &LlmError) -> bool {
        match error {
            // status 0 stands for transport-level failures (timeouts,
            // connection resets), which are worth retrying.
            LlmError::Http { status, .. } => {
                *status == 0 || *status == 429 || (500..=599).contains(status)
            }
            _ => false,
        }
    }

    /// Returns the response text for a prompt: from cache when possible,
    /// otherwise over the network with retry and backoff, persisting the
    /// response before returning it.
    pub fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let key = cache_key(
            &self.config.model,
            prompt,
            self.config.temperature,
            self.config.max_response_tokens,
        );
        if let Some(cached) = self.read_cache(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(cached);
        }
        self.misses.fetch_add(1, Ordering::SeqCst);

        let api_key =
            std::env::var(&self.config.api_key_env).map_err(|_| LlmError::MissingApiKey {
                env_var: self.config.api_key_env.clone(),
            })?;

        let attempts = self.config.max_retries + 1;
        let mut last_error = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff_delay(attempt - 1));
            }
            let result = {
                let _permit = self.semaphore.acquire();
                self.send_once(&api_key, prompt)
            };
            match result {
                Ok(text) => {
                    self.write_cache(&key, &text)?;
                    return Ok(text);
                }
                Err(error) if Self::retryable(&error) => last_error = Some(error),
                Err(error) => return Err(error),
            }
        }
        Err(LlmError::RetriesExhausted {
            attempts,
            last_error: last_error
                .map(|e| e.to_string())
                .unwrap_or_else(|| "unknown".into()),
        })
    }
}

impl ScoringBackend for LlmClient {
    fn id(&self) -> &str {
        &self.config.model
    }

    fn deterministic(&self) -> bool {
        // Temperature 0 plus the read-write cache make reruns repeatable
        // at the score layer even though the upstream decoder is not
        // formally deterministic.
        self.config.temperature == 0.0 && self.config.cache_mode == CacheMode::ReadWrite
    }

    fn complete(&self, request: &ScoreRequest<'_>) -> Result<String, BackendError> {
        LlmClient::complete(self, request.prompt).map_err(|e| BackendError {
            transient: Self::retryable(&e),
            message: e.to_string(),
        })
    }
}
