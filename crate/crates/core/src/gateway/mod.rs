//! Provider gateway: one entry point for chat completion, embeddings and
//! relevance scoring, with a record/replay cache so runs are reproducible
//! offline.
//!
//! In `replay` mode every call is answered from the cache file and unseen
//! requests fail with [`ProviderError::CacheMiss`]. In `record` mode cache
//! hits are served as-is and misses go to the backend and are appended.
//! `live` mode talks to the backend only.

pub mod cache;
pub mod canonical;
pub mod http;
pub mod lexical;
pub mod scripted;

use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use cache::{CacheEntry, ReplayCache};

/// Default completion budget for section generation.
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt_id: String,
    pub system_text: String,
    pub user_text: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_OUTPUT_TOKENS
}

impl ChatRequest {
    pub fn new(
        prompt_id: impl Into<String>,
        system_text: impl Into<String>,
        user_text: impl Into<String>,
    ) -> Self {
        ChatRequest {
            prompt_id: prompt_id.into(),
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub dimension: usize,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        let dimension = values.len();
        EmbeddingVector { values, dimension }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRequest {
    pub query_text: String,
    pub candidate_texts: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Live,
    Record,
    #[default]
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RerankMode {
    Remote,
    #[default]
    Lexical,
}

/// Which backend answers cache misses in live/record mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Openai,
    /// Deterministic rule-driven stand-in, used to record the shipped fixtures.
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    pub backend: BackendKind,
    pub base_url: String,
    pub chat_model: String,
    pub embed_model: String,
    pub embed_dim: usize,
    pub rerank_mode: RerankMode,
    pub rerank_model: String,
    pub cache_path: Option<PathBuf>,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            mode: ProviderMode::Replay,
            backend: BackendKind::Openai,
            base_url: "https://api.openai.com/v1".into(),
            chat_model: "gpt-4o-mini".into(),
            embed_model: "text-embedding-ada-002".into(),
            embed_dim: 1536,
            rerank_mode: RerankMode::Lexical,
            rerank_model: "ms-marco-MiniLM-L-6-v2".into(),
            cache_path: None,
            max_in_flight: 4,
            timeout_secs: 60,
            retry: RetryPolicy::default(),
        }
    }
}

/// Environment variable holding the bearer token for live calls.
pub const API_KEY_ENV: &str = "BRQUAL_API_KEY";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited,
    #[error("authentication: {0}")]
    Auth(String),
    #[error("unexpected response: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("replay cache has no entry for {kind} request {request_hash}")]
    CacheMiss { kind: String, request_hash: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("embedding dimension {actual} does not match configured {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gateway not configured: {0}")]
    NotConfigured(String),
    #[error("cache: {0}")]
    Cache(String),
}

impl ProviderError {
    /// Errors that mean the provider itself is unreachable, as opposed to a single bad request.
    pub fn is_outage(&self) -> bool {
        matches!(
            self,
            ProviderError::Transport(_)
                | ProviderError::RateLimited { .. }
                | ProviderError::Auth(_)
                | ProviderError::NotConfigured(_)
        )
    }
}

/// A model service that can answer chat, embedding and rerank calls.
pub trait Backend: Send + Sync {
    fn chat(&self, model: &str, request: &ChatRequest) -> Result<String, BackendError>;
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
    fn rerank(
        &self,
        model: &str,
        query: &str,
        candidates: &[String],
    ) -> Result<Vec<f64>, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Chat,
    Embed,
    Rerank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Served {
    Cache,
    Backend,
    Local,
    Miss,
}

/// One logical provider call, as seen by the gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub kind: CallKind,
    pub prompt_id: Option<String>,
    pub request_hash: String,
    pub served: Served,
}

struct Limiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    config: ProviderConfig,
    backend: Option<Box<dyn Backend>>,
    cache: ReplayCache,
    limiter: Limiter,
    log: Mutex<Vec<CallRecord>>,
}

impl Gateway {
    /// Build a gateway from configuration, constructing the configured backend.
    ///
    /// Replay mode never constructs a backend, so it needs no credentials.
    pub fn from_config(config: ProviderConfig) -> Result<Self, ProviderError> {
        let backend: Option<Box<dyn Backend>> = match (config.mode, config.backend) {
            (ProviderMode::Replay, _) => None,
            (_, BackendKind::Scripted) => {
                Some(Box::new(scripted::ScriptedBackend::new(config.embed_dim)))
            }
            (_, BackendKind::Openai) => {
                let key = std::env::var(API_KEY_ENV).map_err(|_| {
                    ProviderError::NotConfigured(format!("{API_KEY_ENV} is not set"))
                })?;
                let b = http::OpenAiBackend::new(
                    &config.base_url,
                    key,
                    Duration::from_secs(config.timeout_secs),
                )
                .map_err(|e| ProviderError::NotConfigured(e.to_string()))?;
                Some(Box::new(b))
            }
        };
        Self::assemble(config, backend)
    }

    /// Build a gateway around an explicit backend (tests, embedding callers).
    pub fn with_backend(
        config: ProviderConfig,
        backend: Box<dyn Backend>,
    ) -> Result<Self, ProviderError> {
        Self::assemble(config, Some(backend))
    }

    /// Replay-only gateway over an in-memory or on-disk cache.
    pub fn replay(config: ProviderConfig) -> Result<Self, ProviderError> {
        let config = ProviderConfig {
            mode: ProviderMode::Replay,
            ..config
        };
        Self::assemble(config, None)
    }

    fn assemble(
        config: ProviderConfig,
        backend: Option<Box<dyn Backend>>,
    ) -> Result<Self, ProviderError> {
        let cache = match (&config.cache_path, config.mode) {
            (_, ProviderMode::Live) | (None, _) => {
                if config.mode == ProviderMode::Replay && config.cache_path.is_none() {
                    log::warn!("replay mode without provider.cache_path: every request will miss");
                }
                ReplayCache::in_memory()
            }
            (Some(path), _) => {
                ReplayCache::open(path).map_err(|e| ProviderError::Cache(e.to_string()))?
            }
        };
        let cap = config.max_in_flight.max(1);
        Ok(Gateway {
            config,
            backend,
            cache,
            limiter: Limiter {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                cap,
            },
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn cache(&self) -> &ReplayCache {
        &self.cache
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().unwrap().clone()
    }

    /// Number of chat calls issued so far with the given prompt id.
    pub fn chat_calls(&self, prompt_id: &str) -> usize {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|r| r.kind == CallKind::Chat && r.prompt_id.as_deref() == Some(prompt_id))
            .count()
    }

    fn note(&self, kind: CallKind, prompt_id: Option<&str>, hash: &str, served: Served) {
        self.log.lock().unwrap().push(CallRecord {
            kind,
            prompt_id: prompt_id.map(str::to_string),
            request_hash: hash.to_string(),
            served,
        });
    }

    fn with_retry<T>(
        &self,
        mut call: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, ProviderError> {
        let attempts = self.config.retry.attempts.max(1);
        let mut backoff = Duration::from_millis(self.config.retry.initial_backoff_ms);
        let mut last = BackendError::Transport("no attempt made".into());
        for attempt in 1..=attempts {
            let result = {
                let _slot = self.limiter.acquire();
                call()
            };
            match result {
                Ok(v) => return Ok(v),
                Err(e @ (BackendError::Transport(_) | BackendError::RateLimited)) => {
                    log::warn!("provider attempt {attempt}/{attempts} failed: {e}");
                    last = e;
                    if attempt < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
                Err(BackendError::Auth(m)) => return Err(ProviderError::Auth(m)),
                Err(BackendError::Protocol(m)) => return Err(ProviderError::Transport(m)),
            }
        }
        Err(match last {
            BackendError::RateLimited => ProviderError::RateLimited { attempts },
            other => ProviderError::Transport(other.to_string()),
        })
    }

    fn backend(&self) -> Result<&dyn Backend, ProviderError> {
        self.backend
            .as_deref()
            .ok_or_else(|| ProviderError::NotConfigured("no backend for live calls".into()))
    }

    /// Look up or produce the response body for a canonical request.
    fn resolve(
        &self,
        kind: CallKind,
        prompt_id: Option<&str>,
        request: Value,
        produce: impl FnOnce() -> Result<String, ProviderError>,
    ) -> Result<String, ProviderError> {
        let canonical = canonical::canonicalize(&request);
        let hash = canonical::request_hash(&canonical);
        if self.config.mode != ProviderMode::Live {
            if let Some(body) = self.cache.get(&hash) {
                self.note(kind, prompt_id, &hash, Served::Cache);
                return Ok(body);
            }
            if self.config.mode == ProviderMode::Replay {
                self.note(kind, prompt_id, &hash, Served::Miss);
                return Err(ProviderError::CacheMiss {
                    kind: kind_name(kind).into(),
                    request_hash: hash,
                });
            }
        }
        let body = produce()?;
        self.note(kind, prompt_id, &hash, Served::Backend);
        if self.config.mode == ProviderMode::Record {
            let fresh = self
                .cache
                .record(CacheEntry {
                    request_hash: hash.clone(),
                    request: canonical,
                    response_body: body.clone(),
                    recorded_at: Utc::now(),
                })
                .map_err(|e| ProviderError::Cache(e.to_string()))?;
            if !fresh {
                // another caller recorded first; its answer is the canonical one
                return Ok(self.cache.get(&hash).unwrap_or(body));
            }
        }
        Ok(body)
    }

    /// Canonical cache request for a chat call against `model`.
    pub fn chat_request_value(model: &str, request: &ChatRequest) -> Value {
        json!({
            "kind": "chat",
            "model": model,
            "prompt_id": request.prompt_id,
            "system_text": request.system_text,
            "user_text": request.user_text,
            "temperature": request.temperature,
            "max_output_tokens": request.max_output_tokens,
        })
    }

    /// Cache key this gateway uses for `request`.
    pub fn chat_request_hash(&self, request: &ChatRequest) -> String {
        canonical::request_hash(&Self::chat_request_value(&self.config.chat_model, request))
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        if request.prompt_id.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty prompt_id".into()));
        }
        let model = &self.config.chat_model;
        let value = Self::chat_request_value(model, request);
        self.resolve(CallKind::Chat, Some(&request.prompt_id), value, || {
            let backend = self.backend()?;
            self.with_retry(|| backend.chat(model, request))
        })
    }

    /// Embed each text; output is index-aligned with the input.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest(
                "embed called with no texts".into(),
            ));
        }
        let model = &self.config.embed_model;
        let expected = self.config.embed_dim;
        let mut out = Vec::with_capacity(texts.len());
        for text in texts {
            let value = json!({"kind": "embed", "model": model, "input": text});
            let body = self.resolve(CallKind::Embed, None, value, || {
                let backend = self.backend()?;
                let mut vectors =
                    self.with_retry(|| backend.embed(model, std::slice::from_ref(text)))?;
                let v = vectors
                    .pop()
                    .ok_or_else(|| ProviderError::Transport("empty embedding response".into()))?;
                check_dim(expected, v.len())?;
                Ok(serde_json::to_string(&v).expect("floats serialize"))
            })?;
            let values: Vec<f64> = serde_json::from_str(&body)
                .map_err(|e| ProviderError::Cache(format!("embedding body: {e}")))?;
            check_dim(expected, values.len())?;
            out.push(EmbeddingVector::new(values));
        }
        Ok(out)
    }

    /// Relevance of each candidate to the query; index-aligned with the candidates.
    pub fn rerank(&self, request: &RerankRequest) -> Result<Vec<f64>, ProviderError> {
        if request.candidate_texts.is_empty() {
            return Err(ProviderError::InvalidRequest(
                "rerank called with no candidates".into(),
            ));
        }
        if self.config.rerank_mode == RerankMode::Lexical {
            let scores = lexical::score_all(&request.query_text, &request.candidate_texts);
            let hash = canonical::request_hash(
                &json!({"kind": "rerank", "model": "lexical", "query": request.query_text, "candidates": request.candidate_texts}),
            );
            self.note(CallKind::Rerank, None, &hash, Served::Local);
            return Ok(scores);
        }
        let model = &self.config.rerank_model;
        let value = json!({
            "kind": "rerank",
            "model": model,
            "query": request.query_text,
            "candidates": request.candidate_texts,
        });
        let body = self.resolve(CallKind::Rerank, None, value, || {
            let backend = self.backend()?;
            let scores = self.with_retry(|| {
                backend.rerank(model, &request.query_text, &request.candidate_texts)
            })?;
            Ok(serde_json::to_string(&scores).expect("floats serialize"))
        })?;
        let scores: Vec<f64> = serde_json::from_str(&body)
            .map_err(|e| ProviderError::Cache(format!("rerank body: {e}")))?;
        if scores.len() != request.candidate_texts.len() {
            return Err(ProviderError::Transport(format!(
                "rerank returned {} scores for {} candidates",
                scores.len(),
                request.candidate_texts.len()
            )));
        }
        Ok(scores)
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<(), ProviderError> {
    if expected != actual {
        return Err(ProviderError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

fn kind_name(kind: CallKind) -> &'static str {
    match kind {
        CallKind::Chat => "chat",
        CallKind::Embed => "embed",
        CallKind::Rerank => "rerank",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Echoes the prompt id; fails the first `fail_first` calls with the given error.
    struct Flaky {
        calls: Arc<AtomicUsize>,
        fail_first: usize,
        error: BackendError,
        dim: usize,
    }

    impl Backend for Flaky {
        fn chat(&self, _model: &str, request: &ChatRequest) -> Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                return Err(self.error.clone());
            }
            Ok(format!("reply to {}", request.prompt_id))
        }
        fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(texts
                .iter()
                .map(|t| vec![t.len() as f64; self.dim])
                .collect())
        }
        fn rerank(&self, _model: &str, _q: &str, c: &[String]) -> Result<Vec<f64>, BackendError> {
            Ok(c.iter().map(|t| t.len() as f64).collect())
        }
    }

    fn flaky(fail_first: usize, error: BackendError) -> (Box<dyn Backend>, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        (
            Box::new(Flaky {
                calls: calls.clone(),
                fail_first,
                error,
                dim: 3,
            }),
            calls,
        )
    }

    fn config(mode: ProviderMode, cache: Option<PathBuf>) -> ProviderConfig {
        ProviderConfig {
            mode,
            cache_path: cache,
            embed_dim: 3,
            retry: RetryPolicy {
                attempts: 3,
                initial_backoff_ms: 1,
            },
            ..ProviderConfig::default()
        }
    }

    #[test]
    fn record_then_replay_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let (b, _) = flaky(0, BackendError::RateLimited);
        let rec =
            Gateway::with_backend(config(ProviderMode::Record, Some(path.clone())), b).unwrap();
        let req = ChatRequest::new("p.v1", "sys", "user text");
        let recorded = rec.chat(&req).unwrap();

        let replay = Gateway::replay(config(ProviderMode::Replay, Some(path))).unwrap();
        assert_eq!(replay.chat(&req).unwrap(), recorded);
        let novel = ChatRequest::new("p.v1", "sys", "something else");
        assert!(matches!(
            replay.chat(&novel),
            Err(ProviderError::CacheMiss { .. })
        ));
    }

    #[test]
    fn whitespace_variants_share_a_cache_entry() {
        let (b, calls) = flaky(0, BackendError::RateLimited);
        let gw = Gateway::with_backend(config(ProviderMode::Record, None), b).unwrap();
        gw.chat(&ChatRequest::new("p", "sys", "open  the\nworld"))
            .unwrap();
        gw.chat(&ChatRequest::new("p", " sys ", "open the world"))
            .unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(gw.call_log()[1].served, Served::Cache);
    }

    #[test]
    fn transport_errors_are_retried_within_budget() {
        let (b, calls) = flaky(2, BackendError::Transport("reset".into()));
        let gw = Gateway::with_backend(config(ProviderMode::Live, None), b).unwrap();
        assert_eq!(
            gw.chat(&ChatRequest::new("p", "", "")).unwrap(),
            "reply to p"
        );
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        let (b, calls) = flaky(5, BackendError::RateLimited);
        let gw = Gateway::with_backend(config(ProviderMode::Live, None), b).unwrap();
        assert_eq!(
            gw.chat(&ChatRequest::new("p", "", "")),
            Err(ProviderError::RateLimited { attempts: 3 })
        );
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn auth_errors_are_not_retried() {
        let (b, calls) = flaky(5, BackendError::Auth("bad key".into()));
        let gw = Gateway::with_backend(config(ProviderMode::Live, None), b).unwrap();
        assert!(matches!(
            gw.chat(&ChatRequest::new("p", "", "")),
            Err(ProviderError::Auth(_))
        ));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn embed_preserves_order_and_length() {
        let (b, _) = flaky(0, BackendError::RateLimited);
        let gw = Gateway::with_backend(config(ProviderMode::Record, None), b).unwrap();
        let out = gw.embed(&["a".into(), "bbb".into(), "a".into()]).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].values, vec![1.0; 3]);
        assert_eq!(out[1].values, vec![3.0; 3]);
        assert_eq!(out[0], out[2]);
        assert!(out.iter().all(|v| v.dimension == 3));
    }

    #[test]
    fn embed_rejects_wrong_dimension() {
        let (b, _) = flaky(0, BackendError::RateLimited);
        let cfg = ProviderConfig {
            embed_dim: 4,
            ..config(ProviderMode::Live, None)
        };
        let gw = Gateway::with_backend(cfg, b).unwrap();
        assert_eq!(
            gw.embed(&["x".into()]),
            Err(ProviderError::DimensionMismatch {
                expected: 4,
                actual: 3
            })
        );
    }

    #[test]
    fn lexical_rerank_needs_no_backend() {
        let gw = Gateway::replay(config(ProviderMode::Replay, None)).unwrap();
        let scores = gw
            .rerank(&RerankRequest {
                query_text: "hopper".into(),
                candidate_texts: vec!["hopper".into()],
            })
            .unwrap();
        assert_eq!(scores, vec![1.0]);
        assert!(gw
            .rerank(&RerankRequest {
                query_text: "x".into(),
                candidate_texts: vec![]
            })
            .is_err());
    }

    #[test]
    fn remote_rerank_is_recorded() {
        let (b, _) = flaky(0, BackendError::RateLimited);
        let cfg = ProviderConfig {
            rerank_mode: RerankMode::Remote,
            ..config(ProviderMode::Record, None)
        };
        let gw = Gateway::with_backend(cfg, b).unwrap();
        let req = RerankRequest {
            query_text: "q".into(),
            candidate_texts: vec!["ab".into(), "abcd".into()],
        };
        assert_eq!(gw.rerank(&req).unwrap(), vec![2.0, 4.0]);
        assert_eq!(gw.cache().len(), 1);
    }

    #[test]
    fn concurrent_callers_share_one_cache() {
        let (b, calls) = flaky(0, BackendError::RateLimited);
        let gw = Arc::new(Gateway::with_backend(config(ProviderMode::Record, None), b).unwrap());
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let gw = gw.clone();
                std::thread::spawn(move || {
                    gw.chat(&ChatRequest::new(format!("p{}", i % 2), "", ""))
                        .unwrap()
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(gw.cache().len(), 2);
        assert!(calls.load(Ordering::SeqCst) >= 2);
    }
}
