//! Table-driven backend for unit tests.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::gateway::{
    Backend, BackendError, ChatRequest, Gateway, ProviderConfig, ProviderMode, RerankMode,
};

#[derive(Default)]
pub struct TableBackend {
    /// Completion per prompt id.
    pub chat: HashMap<String, String>,
    /// Embedding per exact input text.
    pub embed: HashMap<String, Vec<f64>>,
    /// Remote rerank scores keyed by candidate text; None makes rerank fail.
    pub rerank: Option<HashMap<String, f64>>,
    pub seen: Mutex<Vec<ChatRequest>>,
}

impl Backend for TableBackend {
    fn chat(&self, _model: &str, request: &ChatRequest) -> Result<String, BackendError> {
        self.seen.lock().unwrap().push(request.clone());
        self.chat.get(&request.prompt_id).cloned().ok_or_else(|| {
            BackendError::Transport(format!("no completion for {}", request.prompt_id))
        })
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        texts
            .iter()
            .map(|t| {
                self.embed
                    .get(t)
                    .cloned()
                    .ok_or_else(|| BackendError::Protocol(format!("no vector for {t:?}")))
            })
            .collect()
    }

    fn rerank(
        &self,
        _model: &str,
        _query: &str,
        candidates: &[String],
    ) -> Result<Vec<f64>, BackendError> {
        let table = self
            .rerank
            .as_ref()
            .ok_or_else(|| BackendError::Transport("rerank down".into()))?;
        Ok(candidates
            .iter()
            .map(|c| table.get(c).copied().unwrap_or(0.0))
            .collect())
    }
}

/// Record-mode gateway (in-memory cache, no retries) over `backend`.
pub fn gateway(backend: TableBackend, dim: usize, rerank: RerankMode) -> Gateway {
    let mut config = ProviderConfig {
        mode: ProviderMode::Record,
        embed_dim: dim,
        rerank_mode: rerank,
        ..Default::default()
    };
    config.retry.attempts = 1;
    config.retry.initial_backoff_ms = 0;
    Gateway::with_backend(config, Box::new(backend)).unwrap()
}
