//! HTTP gateway to a chat-completions endpoint, with a content-addressed
//! disk cache.
//!
//! Cache entries live at `<cache_dir>/<first two hex chars>/<digest>.json`
//! and store both the request and the response, so a cache directory is
//! self-describing and auditable. A hit never touches the network, which is
//! what makes offline replay runs possible.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{CacheKey, ChatCompleter, ChatMessage, LlmRequest, LlmResponse};
use crate::sync_util::Semaphore;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmGatewayConfig {
    /// Full chat-completions endpoint URL.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token. The token
    /// itself never appears in configuration.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Base backoff; doubles per retry.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    /// `None` disables the disk cache.
    pub cache_dir: Option<PathBuf>,
}

impl Default for LlmGatewayConfig {
    fn default() -> Self {
        LlmGatewayConfig {
            base_url: String::new(),
            api_key_env: None,
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 250,
            max_in_flight: 4,
            cache_dir: None,
        }
    }
}

impl LlmGatewayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_url.is_empty() {
            return Err(Error::Config("llm endpoint base_url is empty".into()));
        }
        if self.timeout_secs <= 0.0 {
            return Err(Error::Config("llm endpoint timeout must be > 0".into()));
        }
        Ok(())
    }
}

/// Process-lifetime counters for one gateway.
#[derive(Debug, Default)]
pub struct CacheStats {
    hits: AtomicU64,
    misses: AtomicU64,
    stored_bytes: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStatsSnapshot {
    pub hits: u64,
    pub misses: u64,
    pub stored_bytes: u64,
}

impl CacheStats {
    pub fn snapshot(&self) -> CacheStatsSnapshot {
        CacheStatsSnapshot {
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
            stored_bytes: self.stored_bytes.load(Ordering::SeqCst),
        }
    }
}

/// On-disk cache entry: the request that produced the response, verbatim.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    request: LlmRequest,
    response: LlmResponse,
}

/// Serializes concurrent calls that share a cache key, so one network
/// round-trip serves them all.
#[derive(Default)]
struct KeyLocks {
    held: Mutex<BTreeSet<String>>,
    released: Condvar,
}

struct KeyGuard<'a> {
    locks: &'a KeyLocks,
    key: String,
}

impl KeyLocks {
    fn lock(&self, key: &str) -> KeyGuard<'_> {
        let mut held = self.held.lock().unwrap();
        while held.contains(key) {
            held = self.released.wait(held).unwrap();
        }
        held.insert(key.to_string());
        KeyGuard {
            locks: self,
            key: key.to_string(),
        }
    }
}

impl Drop for KeyGuard<'_> {
    fn drop(&mut self) {
        self.locks.held.lock().unwrap().remove(&self.key);
        self.locks.released.notify_all();
    }
}

pub struct HttpGateway {
    cfg: LlmGatewayConfig,
    http: reqwest::blocking::Client,
    gate: Semaphore,
    key_locks: KeyLocks,
    stats: Arc<CacheStats>,
}

/// Wire shape of a chat-completions response, reduced to what we read.
#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    max_tokens: u32,
}

enum RequestFailure {
    Transient(String),
    Fatal(Error),
}

impl HttpGateway {
    pub fn new(cfg: LlmGatewayConfig) -> Result<Self> {
        cfg.validate()?;
        if let Some(dir) = &cfg.cache_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let gate = Semaphore::new(cfg.max_in_flight);
        Ok(HttpGateway {
            cfg,
            http,
            gate,
            key_locks: KeyLocks::default(),
            stats: Arc::new(CacheStats::default()),
        })
    }

    pub fn stats(&self) -> CacheStatsSnapshot {
        self.stats.snapshot()
    }

    fn entry_path(dir: &Path, key: &CacheKey) -> PathBuf {
        dir.join(&key.0[..2]).join(format!("{key}.json"))
    }

    fn read_entry(path: &Path) -> Option<LlmResponse> {
        let text = std::fs::read_to_string(path).ok()?;
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(entry) => Some(entry.response),
            Err(e) => {
                log::warn!("ignoring corrupt cache entry {}: {e}", path.display());
                None
            }
        }
    }

    fn write_entry(&self, path: &Path, entry: &CacheEntry) -> Result<()> {
        let parent = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::io(parent.display().to_string(), e))?;
        let text = serde_json::to_string_pretty(entry)
            .map_err(|e| Error::MalformedResponse(e.to_string()))?;
        std::fs::write(path, &text).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.stats
            .stored_bytes
            .fetch_add(text.len() as u64, Ordering::SeqCst);
        Ok(())
    }

    fn send(&self, req: &LlmRequest) -> std::result::Result<LlmResponse, RequestFailure> {
        let body = WireRequest {
            model: &req.model,
            messages: &req.messages,
            temperature: req.temperature,
            seed: req.seed,
            max_tokens: req.max_tokens,
        };
        let mut http_req = self.http.post(&self.cfg.base_url).json(&body);
        if let Some(var) = &self.cfg.api_key_env {
            if let Ok(token) = std::env::var(var) {
                if !token.is_empty() {
                    http_req = http_req.header("Authorization", format!("Bearer {token}"));
                }
            }
        }
        let resp = http_req
            .send()
            .map_err(|e| RequestFailure::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(RequestFailure::Transient(format!("http status {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            let snippet: String = body.chars().take(200).collect();
            return Err(RequestFailure::Fatal(Error::Transport(format!(
                "http status {status}: {snippet}"
            ))));
        }
        let wire: WireResponse = resp
            .json()
            .map_err(|e| RequestFailure::Fatal(Error::MalformedResponse(e.to_string())))?;
        let usage = wire.usage.map_or(crate::llm::TokenUsage::default(), |u| {
            crate::llm::TokenUsage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }
        });
        let choice = wire.choices.into_iter().next().ok_or_else(|| {
            RequestFailure::Fatal(Error::MalformedResponse("response has no choices".into()))
        })?;
        Ok(LlmResponse {
            content: choice.message.content,
            finish_reason: choice.finish_reason.unwrap_or_else(|| "stop".into()),
            usage,
            model: wire.model,
            attempts: 1,
        })
    }

    fn send_with_retries(&self, req: &LlmRequest) -> Result<LlmResponse> {
        let _permit = self.gate.acquire();
        let mut attempt = 0;
        loop {
            match self.send(req) {
                Ok(mut resp) => {
                    resp.attempts = attempt + 1;
                    return Ok(resp);
                }
                Err(RequestFailure::Fatal(e)) => return Err(e),
                Err(RequestFailure::Transient(msg)) => {
                    if attempt >= self.cfg.max_retries {
                        return Err(Error::Transport(format!(
                            "{} (after {} attempts)",
                            msg,
                            attempt + 1
                        )));
                    }
                    let delay = self.cfg.backoff_ms.saturating_mul(1 << attempt.min(16));
                    log::debug!("llm retry {}: {}", attempt + 1, msg);
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
            }
        }
    }
}

impl ChatCompleter for HttpGateway {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse> {
        req.validate()?;
        let Some(dir) = self.cfg.cache_dir.clone() else {
            return self.send_with_retries(req);
        };
        let key = CacheKey::of(req);
        let _key_guard = self.key_locks.lock(&key.0);
        let path = Self::entry_path(&dir, &key);
        if let Some(resp) = Self::read_entry(&path) {
            self.stats.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(resp);
        }
        self.stats.misses.fetch_add(1, Ordering::SeqCst);
        let response = self.send_with_retries(req)?;
        self.write_entry(
            &path,
            &CacheEntry {
                request: req.clone(),
                response: response.clone(),
            },
        )?;
        Ok(response)
    }

    fn name(&self) -> &'static str {
        "http"
    }
}

/// Entry count and total size of a cache directory on disk.
pub fn disk_cache_usage(dir: &Path) -> Result<(usize, u64)> {
    let mut files = 0usize;
    let mut bytes = 0u64;
    if !dir.exists() {
        return Ok((0, 0));
    }
    for shard in std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))? {
        let shard = shard.map_err(|e| Error::io(dir.display().to_string(), e))?;
        if !shard.path().is_dir() {
            continue;
        }
        for entry in std::fs::read_dir(shard.path())
            .map_err(|e| Error::io(shard.path().display().to_string(), e))?
        {
            let entry = entry.map_err(|e| Error::io(shard.path().display().to_string(), e))?;
            if entry.path().extension().is_some_and(|x| x == "json") {
                files += 1;
                bytes += entry
                    .metadata()
                    .map_err(|e| Error::io(entry.path().display().to_string(), e))?
                    .len();
            }
        }
    }
    Ok((files, bytes))
}

/// Delete every cache entry under `dir`; returns how many were removed.
pub fn clear_disk_cache(dir: &Path) -> Result<usize> {
    let mut removed = 0usize;
    if !dir.exists() {
        return Ok(0);
    }
    for shard in std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))? {
        let shard = shard.map_err(|e| Error::io(dir.display().to_string(), e))?;
        if !shard.path().is_dir() {
            continue;
        }
        for entry in std::fs::read_dir(shard.path())
            .map_err(|e| Error::io(shard.path().display().to_string(), e))?
        {
            let entry = entry.map_err(|e| Error::io(shard.path().display().to_string(), e))?;
            if entry.path().extension().is_some_and(|x| x == "json") {
                std::fs::remove_file(entry.path())
                    .map_err(|e| Error::io(entry.path().display().to_string(), e))?;
                removed += 1;
            }
        }
        // Prune the shard directory if emptied; ignore failures (non-entry
        // files may remain).
        let _ = std::fs::remove_dir(shard.path());
    }
    Ok(removed)
}
