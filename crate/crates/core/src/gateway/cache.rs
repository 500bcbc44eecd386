//! On-disk response cache and per-run audit log.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{GatewayError, ModelVerdict, ProviderConfig};
use crate::digest::sha256_hex;
use crate::prompt::PromptRequest;

#[derive(Serialize)]
struct KeyMaterial<'a> {
    provider: &'a str,
    model_id: &'a str,
    instruction: &'a str,
    images: Vec<String>,
    temperature: String,
}

/// Digest over everything that determines a reply: provider name, model id,
/// instruction text, ordered image content hashes and temperature.
pub fn cache_key(cfg: &ProviderConfig, req: &PromptRequest) -> String {
    let material = KeyMaterial {
        provider: &cfg.name,
        model_id: &cfg.model_id,
        instruction: req.instruction,
        images: req.images.iter().map(|f| f.content_hash()).collect(),
        // Exact bit pattern, so 0.1 and 0.1000000001 never collide.
        temperature: format!("{:016x}", cfg.temperature.to_bits()),
    };
    sha256_hex(serde_json::to_vec(&material).expect("key material serializes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub verdict: ModelVerdict,
    pub created_at: DateTime<Utc>,
}

/// `<dir>/<provider>/<key>.json`. Reads go straight to disk and may run
/// concurrently; writes go through a temp file and rename under a lock.
#[derive(Debug)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    write_lock: Mutex<()>,
}

fn io_err(path: &Path, source: std::io::Error) -> GatewayError {
    GatewayError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            write_lock: Mutex::new(()),
        }
    }

    /// A cache that never stores anything.
    pub fn disabled() -> Self {
        Self {
            dir: None,
            write_lock: Mutex::new(()),
        }
    }

    pub fn entry_path(&self, provider: &str, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(provider).join(format!("{key}.json")))
    }

    /// A corrupt or mismatched entry is treated as a miss and logged.
    pub fn get(&self, provider: &str, key: &str) -> Option<CacheEntry> {
        let path = self.entry_path(provider, key)?;
        let raw = std::fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&raw) {
            Ok(e) if e.key == key => Some(e),
            Ok(_) => {
                tracing::warn!(path = %path.display(), "cache entry key mismatch; ignoring");
                None
            }
            Err(err) => {
                tracing::warn!(path = %path.display(), %err, "corrupt cache entry; ignoring");
                None
            }
        }
    }

    pub fn put(&self, provider: &str, entry: &CacheEntry) -> Result<(), GatewayError> {
        let Some(path) = self.entry_path(provider, &entry.key) else {
            return Ok(());
        };
        let _guard = self.write_lock.lock().expect("cache lock poisoned");
        let parent = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        std::fs::write(&tmp, body).map_err(|e| io_err(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
    }
}

/// One audit record per provider reply, cached or live, successful or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub provider: String,
    pub model_id: String,
    pub mode: String,
    pub scenario_id: String,
    pub frames: Vec<u32>,
    pub cache_key: String,
    pub cached: bool,
    pub attempts: u32,
    pub latency_ms: u64,
    pub raw_text: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct AuditLog {
    dir: PathBuf,
}

impl AuditLog {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record_path(&self, r: &AuditRecord) -> PathBuf {
        let first = r.frames.first().copied().unwrap_or(0);
        let last = r.frames.last().copied().unwrap_or(0);
        self.dir
            .join(format!("{}_{first:06}-{last:06}_{}_{}.json", r.scenario_id, r.provider, r.mode))
    }

    pub fn write(&self, r: &AuditRecord) -> Result<PathBuf, GatewayError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        let path = self.record_path(r);
        let body = serde_json::to_vec_pretty(r).expect("audit record serializes");
        std::fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}
