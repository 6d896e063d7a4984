//! OpenAI-compatible wire client: `/chat/completions`, `/embeddings`, and a
//! `/rerank` endpoint in the common `{query, documents}` shape.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;

use super::{Backend, BackendError, ChatRequest};

pub struct OpenAiBackend {
    client: Client,
    base_url: String,
    api_key: String,
}

impl OpenAiBackend {
    pub fn new(base_url: &str, api_key: String, timeout: Duration) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(OpenAiBackend {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
        })
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<String, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let resp = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            s if s.is_success() => Ok(text),
            StatusCode::TOO_MANY_REQUESTS => Err(BackendError::RateLimited),
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => {
                Err(BackendError::Auth(format!("{status} from {url}")))
            }
            s => Err(BackendError::Transport(format!(
                "{s} from {url}: {}",
                crate::text::prefix_chars(&text, 200)
            ))),
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct RerankResponse {
    results: Vec<RerankDatum>,
}

#[derive(Deserialize)]
struct RerankDatum {
    index: usize,
    relevance_score: f64,
}

fn protocol(e: serde_json::Error) -> BackendError {
    BackendError::Protocol(e.to_string())
}

impl Backend for OpenAiBackend {
    fn chat(&self, model: &str, request: &ChatRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let parsed: ChatResponse =
            serde_json::from_str(&self.post("/chat/completions", body)?).map_err(protocol)?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Protocol("completion without content".into()))
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({"model": model, "input": texts});
        let mut parsed: EmbeddingResponse =
            serde_json::from_str(&self.post("/embeddings", body)?).map_err(protocol)?;
        parsed.data.sort_by_key(|d| d.index);
        if parsed.data.len() != texts.len()
            || parsed.data.iter().enumerate().any(|(i, d)| d.index != i)
        {
            return Err(BackendError::Protocol(
                "embedding indices do not cover the input".into(),
            ));
        }
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }

    fn rerank(
        &self,
        model: &str,
        query: &str,
        candidates: &[String],
    ) -> Result<Vec<f64>, BackendError> {
        let body = json!({"model": model, "query": query, "documents": candidates});
        let parsed: RerankResponse =
            serde_json::from_str(&self.post("/rerank", body)?).map_err(protocol)?;
        let mut scores = vec![None; candidates.len()];
        for r in parsed.results {
            if let Some(slot) = scores.get_mut(r.index) {
                *slot = Some(r.relevance_score);
            }
        }
        scores
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| BackendError::Protocol("rerank response missing candidates".into()))
    }
}
