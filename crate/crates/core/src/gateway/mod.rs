//! Dispatch of prompt requests to remote multimodal models.
//!
//! The [`Gateway`] owns one slot per configured provider. Each slot bounds
//! in-flight requests with a counting semaphore, retries transient failures
//! with exponential backoff, and consults a disk cache before touching the
//! network. Every reply is written verbatim to the run's audit log.

pub mod cache;
pub mod http;
pub mod parse;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, AuditLog, AuditRecord, CacheEntry, ResponseCache};
pub use http::HttpAdapter;
pub use parse::{parse_verdict, ObjectDescription, ParseError, VerdictFields};

use crate::prompt::PromptRequest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// OpenAI-compatible `chat/completions` (also served by Mistral, vLLM,
    /// OpenRouter and most self-hosted gateways).
    OpenaiChat,
    /// Google `generateContent`. `{model}` in the endpoint is replaced by
    /// the model id.
    Gemini,
}

fn default_max_output_tokens() -> u32 {
    1024
}
fn default_timeout() -> f64 {
    120.0
}
fn default_parallel() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub name: String,
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model_id: String,
    /// Environment variable holding the API key. The key itself is never
    /// stored in configs, caches or logs.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    /// Seconds.
    #[serde(default = "default_timeout")]
    pub request_timeout: f64,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
}

impl ProviderConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |reason: &str| {
            Err(GatewayError::Config {
                provider: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return bad("name must be non-empty and use only letters, digits, '-', '_' or '.'");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be >= 0");
        }
        if self.max_parallel == 0 {
            return bad("max_parallel must be >= 1");
        }
        if !(self.request_timeout.is_finite() && self.request_timeout > 0.0) {
            return bad("request_timeout must be positive");
        }
        if self.model_id.is_empty() {
            return bad("model_id is empty");
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProvidersFile {
    List(Vec<ProviderConfig>),
    Wrapped { providers: Vec<ProviderConfig> },
}

/// Reads `providers.json`: either a list of configs or `{"providers": [...]}`.
pub fn load_providers(path: &Path) -> Result<Vec<ProviderConfig>, GatewayError> {
    let raw = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed: ProvidersFile = serde_json::from_str(&raw).map_err(|e| GatewayError::Config {
        provider: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let list = match parsed {
        ProvidersFile::List(l) | ProvidersFile::Wrapped { providers: l } => l,
    };
    let mut seen = std::collections::BTreeSet::new();
    for p in &list {
        p.validate()?;
        if !seen.insert(p.name.clone()) {
            return Err(GatewayError::Config {
                provider: p.name.clone(),
                reason: "duplicate provider name".into(),
            });
        }
    }
    Ok(list)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVerdict {
    pub classification: u8,
    pub scene_context: String,
    pub justification: String,
    pub objects: Vec<ObjectDescription>,
    pub raw_text: String,
    pub provider: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ModelVerdict {
    pub fn from_fields(fields: VerdictFields, raw_text: String, provider: String, latency_ms: u64) -> Self {
        Self {
            classification: fields.classification,
            scene_context: fields.scene_context,
            justification: fields.justification,
            objects: fields.objects,
            raw_text,
            provider,
            latency_ms,
            warnings: fields.warnings,
        }
    }

    pub fn fields(&self) -> VerdictFields {
        VerdictFields {
            classification: self.classification,
            scene_context: self.scene_context.clone(),
            justification: self.justification.clone(),
            objects: self.objects.clone(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn is_collision(&self) -> bool {
        self.classification == 1
    }
}

/// Failure of a single provider call.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("request timed out")]
    Timeout,
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
}

impl TransportError {
    pub fn from_status(status: u16, body: String) -> Self {
        match status {
            401 | 403 => TransportError::Auth(format!("HTTP {status}")),
            _ => TransportError::Status { status, body },
        }
    }

    /// Rate limits, server errors and timeouts are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Status { status, .. } => *status == 429 || (500..600).contains(status),
            TransportError::Timeout => true,
            TransportError::Auth(_) | TransportError::Network(_) | TransportError::Malformed(_) => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("provider {provider}: {reason}")]
    Config { provider: String, reason: String },
    #[error("unknown provider {0:?}")]
    UnknownProvider(String),
    #[error("provider {provider}: environment variable {var} is not set")]
    MissingCredential { provider: String, var: String },
    #[error("provider {provider}: {source}")]
    Auth {
        provider: String,
        #[source]
        source: TransportError,
    },
    #[error("provider {provider}: gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        provider: String,
        attempts: u32,
        last: TransportError,
    },
    #[error("provider {provider}: {source}")]
    Transport {
        provider: String,
        #[source]
        source: TransportError,
    },
    #[error("provider {provider}: {source}")]
    Unparseable {
        provider: String,
        raw_text: String,
        #[source]
        source: ParseError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Produces the raw text reply for one request. Implementations must be
/// safe to call from several threads.
pub trait ProviderAdapter: Send + Sync {
    fn complete(&self, cfg: &ProviderConfig, req: &PromptRequest, api_key: Option<&str>) -> Result<String, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Seconds before the first retry.
    pub base_delay: f64,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: 1.0,
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Wait before attempt `n + 1`, after `n >= 1` failed attempts.
    pub fn delay(&self, failed_attempts: u32) -> Duration {
        Duration::from_secs_f64(self.base_delay * self.factor.powi(failed_attempts as i32 - 1))
    }
}

/// Counting semaphore.
#[derive(Debug)]
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

struct ProviderSlot {
    config: ProviderConfig,
    adapter: Arc<dyn ProviderAdapter>,
    semaphore: Semaphore,
    calls: AtomicUsize,
    cache_hits: AtomicUsize,
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Outcome of [`Gateway::send`] with bookkeeping for the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct SendOutcome {
    pub verdict: ModelVerdict,
    pub cached: bool,
    pub attempts: u32,
    pub cache_key: String,
}

pub struct Gateway {
    slots: BTreeMap<String, ProviderSlot>,
    cache: ResponseCache,
    audit: Option<AuditLog>,
    retry: RetryPolicy,
    sleeper: Sleeper,
}

impl Gateway {
    pub fn new(cache: ResponseCache, retry: RetryPolicy) -> Self {
        Self {
            slots: BTreeMap::new(),
            cache,
            audit: None,
            retry,
            sleeper: Arc::new(std::thread::sleep),
        }
    }

    pub fn with_audit(mut self, audit: AuditLog) -> Self {
        self.audit = Some(audit);
        self
    }

    /// Replaces the backoff sleep, e.g. to record delays in tests.
    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    pub fn add_provider(&mut self, config: ProviderConfig, adapter: Arc<dyn ProviderAdapter>) -> Result<(), GatewayError> {
        config.validate()?;
        if self.slots.contains_key(&config.name) {
            return Err(GatewayError::Config {
                provider: config.name.clone(),
                reason: "duplicate provider name".into(),
            });
        }
        self.slots.insert(
            config.name.clone(),
            ProviderSlot {
                semaphore: Semaphore::new(config.max_parallel),
                config,
                adapter,
                calls: AtomicUsize::new(0),
                cache_hits: AtomicUsize::new(0),
            },
        );
        Ok(())
    }

    pub fn provider_names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn provider(&self, name: &str) -> Option<&ProviderConfig> {
        self.slots.get(name).map(|s| &s.config)
    }

    /// Adapter invocations (network attempts) made for `provider`.
    pub fn calls(&self, provider: &str) -> usize {
        self.slots.get(provider).map_or(0, |s| s.calls.load(Ordering::SeqCst))
    }

    pub fn total_calls(&self) -> usize {
        self.slots.values().map(|s| s.calls.load(Ordering::SeqCst)).sum()
    }

    pub fn cache_hits(&self, provider: &str) -> usize {
        self.slots.get(provider).map_or(0, |s| s.cache_hits.load(Ordering::SeqCst))
    }

    fn audit(&self, record: AuditRecord) {
        if let Some(log) = &self.audit {
            if let Err(err) = log.write(&record) {
                tracing::warn!(%err, "failed to write audit record");
            }
        }
    }

    pub fn send(&self, provider: &str, req: &PromptRequest) -> Result<SendOutcome, GatewayError> {
        let slot = self
            .slots
            .get(provider)
            .ok_or_else(|| GatewayError::UnknownProvider(provider.to_string()))?;
        let cfg = &slot.config;
        let key = cache_key(cfg, req);
        let record = |cached: bool, attempts: u32, latency_ms: u64, raw: Option<String>, error: Option<String>| AuditRecord {
            provider: cfg.name.clone(),
            model_id: cfg.model_id.clone(),
            mode: req.mode.to_string(),
            scenario_id: req.scenario_id.clone(),
            frames: req.window.frame_indices.clone(),
            cache_key: key.clone(),
            cached,
            attempts,
            latency_ms,
            raw_text: raw,
            error,
        };

        if let Some(entry) = self.cache.get(&cfg.name, &key) {
            slot.cache_hits.fetch_add(1, Ordering::SeqCst);
            let v = &entry.verdict;
            self.audit(record(true, 0, v.latency_ms, Some(v.raw_text.clone()), None));
            return Ok(SendOutcome {
                verdict: entry.verdict,
                cached: true,
                attempts: 0,
                cache_key: key,
            });
        }

        let api_key = match &cfg.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| GatewayError::MissingCredential {
                provider: cfg.name.clone(),
                var: var.clone(),
            })?),
            None => None,
        };

        let _permit = slot.semaphore.acquire();
        let mut attempts = 0u32;
        let (raw, latency_ms) = loop {
            attempts += 1;
            slot.calls.fetch_add(1, Ordering::SeqCst);
            let started = Instant::now();
            match slot.adapter.complete(cfg, req, api_key.as_deref()) {
                Ok(text) => break (text, started.elapsed().as_millis() as u64),
                Err(e) if e.is_retryable() && attempts < self.retry.max_attempts => {
                    let wait = self.retry.delay(attempts);
                    tracing::debug!(provider = %cfg.name, attempt = attempts, ?wait, error = %e, "retrying");
                    (self.sleeper)(wait);
                }
                Err(e) => {
                    self.audit(record(false, attempts, 0, None, Some(e.to_string())));
                    return Err(match e {
                        TransportError::Auth(_) => GatewayError::Auth {
                            provider: cfg.name.clone(),
                            source: e,
                        },
                        e if e.is_retryable() => GatewayError::RetriesExhausted {
                            provider: cfg.name.clone(),
                            attempts,
                            last: e,
                        },
                        e => GatewayError::Transport {
                            provider: cfg.name.clone(),
                            source: e,
                        },
                    });
                }
            }
        };

        let fields = match (raw.trim().is_empty(), parse_verdict(&raw)) {
            (false, Ok(f)) => f,
            (_, parsed) => {
                let source = parsed.err().unwrap_or(ParseError::NoJson);
                self.audit(record(false, attempts, latency_ms, Some(raw.clone()), Some(source.to_string())));
                return Err(GatewayError::Unparseable {
                    provider: cfg.name.clone(),
                    raw_text: raw,
                    source,
                });
            }
        };
        let verdict = ModelVerdict::from_fields(fields, raw.clone(), cfg.name.clone(), latency_ms);
        self.cache.put(
            &cfg.name,
            &CacheEntry {
                key: key.clone(),
                verdict: verdict.clone(),
                created_at: chrono::Utc::now(),
            },
        )?;
        self.audit(record(false, attempts, latency_ms, Some(raw), None));
        Ok(SendOutcome {
            verdict,
            cached: false,
            attempts,
            cache_key: key,
        })
    }
}
