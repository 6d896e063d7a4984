//! Knowledge base construction and the retrieval funnel:
//! query generation, candidate retrieval, re-ranking.

pub mod chunk;
pub mod index;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

pub use chunk::{chunk_id, chunk_text, Window, DEFAULT_CHUNK_SIZE, DEFAULT_OVERLAP};
pub use index::{
    cosine, ingest_knowledge, sort_by_similarity, IndexError, IndexMetadata, IngestOutcome,
    KnowledgeChunk, KnowledgeDocument, VectorIndex,
};

use crate::gateway::{lexical, ChatRequest, Gateway, ProviderError, RerankRequest};
use crate::prompts::{fill_slots, PromptCatalog, QUERYGEN_PROMPT_ID};
use crate::text::prefix_chars;

pub const DEFAULT_POOL_SIZE: usize = 40;
pub const DEFAULT_KEEP: usize = 15;
pub const MAX_QUERIES: usize = 5;
/// Characters of the description used as the query of last resort.
pub const FALLBACK_QUERY_CHARS: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RagConfig {
    pub pool_size: usize,
    pub keep: usize,
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for RagConfig {
    fn default() -> Self {
        RagConfig {
            pool_size: DEFAULT_POOL_SIZE,
            keep: DEFAULT_KEEP,
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_OVERLAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub chunk_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub chunk_id: String,
    pub rerank_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub queries: Vec<String>,
    pub candidates: Vec<Candidate>,
    pub selected: Vec<Selected>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Queries plus a note when a fallback replaced the model's answer.
#[derive(Debug, Clone, PartialEq)]
pub struct Queries {
    pub queries: Vec<String>,
    pub fallback: Option<String>,
}

/// Parse a JSON array of strings from a completion: trimmed, non-empty,
/// case-insensitively distinct, at most five, in the model's order.
pub fn parse_queries(completion: &str) -> Option<Vec<String>> {
    let start = completion.find('[')?;
    let end = completion.rfind(']')?;
    if end < start {
        return None;
    }
    let items: Vec<serde_json::Value> = serde_json::from_str(&completion[start..=end]).ok()?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for item in items {
        let q = item.as_str()?.trim().to_string();
        if !q.is_empty() && seen.insert(q.to_lowercase()) {
            out.push(q);
        }
    }
    out.truncate(MAX_QUERIES);
    (!out.is_empty()).then_some(out)
}

fn fallback_query(summary: &str, description: &str) -> String {
    if summary.trim().is_empty() {
        prefix_chars(description.trim(), FALLBACK_QUERY_CHARS).to_string()
    } else {
        summary.trim().to_string()
    }
}

/// Ask the model for search queries; falls back to the summary (or the start
/// of the description) when the call fails or the answer does not parse.
pub fn generate_queries(
    summary: &str,
    description: &str,
    gateway: &Gateway,
    catalog: &PromptCatalog,
) -> Queries {
    let fallback = |why: String| Queries {
        queries: vec![fallback_query(summary, description)],
        fallback: Some(why),
    };
    let Some(prompt) = catalog.task(QUERYGEN_PROMPT_ID) else {
        return fallback(format!("prompt {QUERYGEN_PROMPT_ID} missing"));
    };
    let user = fill_slots(
        &prompt.body,
        &[("summary", summary), ("description", description)],
    );
    match gateway.chat(&ChatRequest::new(
        &prompt.prompt_id,
        &prompt.system_text,
        user,
    )) {
        Ok(completion) => match parse_queries(&completion) {
            Some(queries) => Queries {
                queries,
                fallback: None,
            },
            None => fallback("query completion did not parse".into()),
        },
        Err(e) => fallback(format!("query generation failed: {e}")),
    }
}

/// Embed every query, take each query's top `pool_size`, merge by maximum
/// similarity per chunk and keep the overall top `pool_size`.
pub fn retrieve_candidates(
    index: &VectorIndex,
    queries: &[String],
    gateway: &Gateway,
    pool_size: usize,
) -> Result<Vec<Candidate>, ProviderError> {
    if queries.is_empty() || index.is_empty() {
        return Ok(Vec::new());
    }
    let vectors = gateway.embed(queries)?;
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for v in &vectors {
        for (id, sim) in index.top_k(&v.values, pool_size) {
            let e = best.entry(id).or_insert(f64::NEG_INFINITY);
            *e = e.max(sim);
        }
    }
    let mut merged: Vec<(String, f64)> = best.into_iter().collect();
    sort_by_similarity(&mut merged);
    merged.truncate(pool_size);
    Ok(merged
        .into_iter()
        .map(|(chunk_id, similarity)| Candidate {
            chunk_id,
            similarity,
        })
        .collect())
}

/// Re-rank candidates against the report text and keep the best `keep`.
///
/// If the rerank call fails, lexical overlap scores are used instead and the
/// second element carries the reason.
pub fn rerank_and_select(
    candidates: &[Candidate],
    index: &VectorIndex,
    report_text: &str,
    gateway: &Gateway,
    keep: usize,
) -> (Vec<Selected>, Option<String>) {
    if candidates.is_empty() {
        return (Vec::new(), None);
    }
    let texts: Vec<String> = candidates
        .iter()
        .map(|c| {
            index
                .get(&c.chunk_id)
                .map(|k| k.text.clone())
                .unwrap_or_default()
        })
        .collect();
    let request = RerankRequest {
        query_text: report_text.to_string(),
        candidate_texts: texts,
    };
    let (scores, note) = match gateway.rerank(&request) {
        Ok(s) => (s, None),
        Err(e) => (
            lexical::score_all(&request.query_text, &request.candidate_texts),
            Some(format!("rerank failed, used lexical scores: {e}")),
        ),
    };
    let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| {
                candidates[b.0]
                    .similarity
                    .total_cmp(&candidates[a.0].similarity)
            })
            .then_with(|| candidates[a.0].chunk_id.cmp(&candidates[b.0].chunk_id))
    });
    ranked.truncate(keep);
    let selected = ranked
        .into_iter()
        .map(|(i, s)| Selected {
            chunk_id: candidates[i].chunk_id.clone(),
            rerank_score: s,
        })
        .collect();
    (selected, note)
}

/// Run the whole funnel for one report.
pub fn retrieve(
    index: &VectorIndex,
    summary: &str,
    description: &str,
    report_text: &str,
    gateway: &Gateway,
    catalog: &PromptCatalog,
    config: &RagConfig,
) -> Result<RetrievalResult, ProviderError> {
    let mut warnings = Vec::new();
    let q = generate_queries(summary, description, gateway, catalog);
    warnings.extend(q.fallback);
    let candidates = retrieve_candidates(index, &q.queries, gateway, config.pool_size)?;
    let (selected, note) = rerank_and_select(&candidates, index, report_text, gateway, config.keep);
    warnings.extend(note);
    Ok(RetrievalResult {
        queries: q.queries,
        candidates,
        selected,
        warnings,
    })
}
