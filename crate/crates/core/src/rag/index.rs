//! Brute-force cosine vector index with manifest + JSONL persistence.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};

use super::chunk::{chunk_id, chunk_text};
use crate::gateway::{EmbeddingVector, Gateway, ProviderError};
use crate::jsonl;

pub const INDEX_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
const EMBED_BATCH: usize = 16;

/// A wiki-style source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeDocument {
    pub title: String,
    #[serde(default)]
    pub url: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeChunk {
    pub chunk_id: String,
    pub source_title: String,
    pub source_url: String,
    pub text: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMetadata {
    pub built_at: DateTime<Utc>,
    pub embed_model: String,
    pub chunk_size: usize,
    pub overlap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dimension: usize,
    chunk_count: usize,
    chunks_file: String,
    metadata: IndexMetadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    pub chunks: Vec<KnowledgeChunk>,
    pub dimension: usize,
    pub metadata: IndexMetadata,
    norms: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("no documents to index")]
    NoDocuments,
    #[error("invalid index: {0}")]
    Invalid(String),
    #[error("index io at {path}: {message}")]
    Io { path: String, message: String },
}

/// Index build output, with documents skipped for lack of content.
#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub index: VectorIndex,
    pub warnings: Vec<String>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity clamped to [-1, 1]; zero vectors score 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

impl VectorIndex {
    /// Assemble and validate an index.
    pub fn new(
        chunks: Vec<KnowledgeChunk>,
        dimension: usize,
        metadata: IndexMetadata,
    ) -> Result<Self, IndexError> {
        if dimension == 0 {
            return Err(IndexError::Invalid("dimension must be positive".into()));
        }
        let mut ids = HashSet::new();
        for c in &chunks {
            if c.embedding.values.len() != dimension || c.embedding.dimension != dimension {
                return Err(IndexError::Invalid(format!(
                    "chunk {} has dimension {}",
                    c.chunk_id,
                    c.embedding.values.len()
                )));
            }
            if c.text.trim().is_empty() {
                return Err(IndexError::Invalid(format!(
                    "chunk {} has empty text",
                    c.chunk_id
                )));
            }
            if !ids.insert(c.chunk_id.clone()) {
                return Err(IndexError::Invalid(format!(
                    "duplicate chunk id {}",
                    c.chunk_id
                )));
            }
        }
        let norms = chunks.iter().map(|c| norm(&c.embedding.values)).collect();
        Ok(VectorIndex {
            chunks,
            dimension,
            metadata,
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn get(&self, chunk_id: &str) -> Option<&KnowledgeChunk> {
        self.chunks.iter().find(|c| c.chunk_id == chunk_id)
    }

    /// Exact cosine of `query` against every chunk, index-aligned with `chunks`.
    pub fn similarities(&self, query: &[f64]) -> Vec<f64> {
        let nq = norm(query);
        self.chunks
            .iter()
            .zip(&self.norms)
            .map(|(c, &nc)| {
                if nq == 0.0 || nc == 0.0 {
                    return 0.0;
                }
                let dot: f64 = c
                    .embedding
                    .values
                    .iter()
                    .zip(query)
                    .map(|(x, y)| x * y)
                    .sum();
                (dot / (nq * nc)).clamp(-1.0, 1.0)
            })
            .collect()
    }

    /// Top `k` chunks for one query vector, ties broken by chunk id.
    pub fn top_k(&self, query: &[f64], k: usize) -> Vec<(String, f64)> {
        let mut scored: Vec<(String, f64)> = self
            .similarities(query)
            .into_iter()
            .enumerate()
            .map(|(i, s)| (self.chunks[i].chunk_id.clone(), s))
            .collect();
        sort_by_similarity(&mut scored);
        scored.truncate(k);
        scored
    }

    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        let io = |p: &Path, e: String| IndexError::Io {
            path: p.display().to_string(),
            message: e,
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e.to_string()))?;
        let manifest = Manifest {
            format_version: INDEX_FORMAT_VERSION,
            dimension: self.dimension,
            chunk_count: self.chunks.len(),
            chunks_file: CHUNKS_FILE.into(),
            metadata: self.metadata.clone(),
        };
        let chunks_path = dir.join(CHUNKS_FILE);
        jsonl::write(&chunks_path, &self.chunks).map_err(|e| io(&chunks_path, e.to_string()))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&manifest_path, text + "\n").map_err(|e| io(&manifest_path, e.to_string()))
    }

    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let io = |p: &Path, e: String| IndexError::Io {
            path: p.display().to_string(),
            message: e,
        };
        let text =
            fs::read_to_string(&manifest_path).map_err(|e| io(&manifest_path, e.to_string()))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| io(&manifest_path, e.to_string()))?;
        if manifest.format_version != INDEX_FORMAT_VERSION {
            return Err(IndexError::Invalid(format!(
                "unsupported format_version {}",
                manifest.format_version
            )));
        }
        let chunks_path = dir.join(&manifest.chunks_file);
        let chunks: Vec<KnowledgeChunk> =
            jsonl::read(&chunks_path).map_err(|e| io(&chunks_path, e.to_string()))?;
        if chunks.len() != manifest.chunk_count {
            return Err(IndexError::Invalid(format!(
                "manifest lists {} chunks, file holds {}",
                manifest.chunk_count,
                chunks.len()
            )));
        }
        Self::new(chunks, manifest.dimension, manifest.metadata)
    }
}

/// Descending similarity, then chunk id ascending.
pub fn sort_by_similarity(items: &mut [(String, f64)]) {
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Chunk, embed and index `documents`.
///
/// Documents repeating an earlier (title, url) pair get a numeric suffix in
/// their source id, so chunk ids stay unique. Embedding runs in batches on up
/// to `parallelism` threads; the gateway's in-flight cap still applies.
pub fn ingest_knowledge(
    documents: &[KnowledgeDocument],
    gateway: &Gateway,
    chunk_size: usize,
    overlap: usize,
    parallelism: usize,
) -> Result<IngestOutcome, IndexError> {
    if documents.is_empty() {
        return Err(IndexError::NoDocuments);
    }
    let mut warnings = Vec::new();
    let mut seen: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut pending: Vec<(String, &KnowledgeDocument, String)> = Vec::new();
    for doc in documents {
        let dup = seen
            .entry((doc.title.as_str(), doc.url.as_str()))
            .or_insert(0);
        let source_id = format!("{}\u{1f}{}\u{1f}{}", doc.title, doc.url, dup);
        *dup += 1;
        if doc.body.trim().is_empty() {
            warnings.push(format!("skipped empty document {:?}", doc.title));
            continue;
        }
        for (ordinal, w) in chunk_text(&doc.body, chunk_size, overlap)
            .into_iter()
            .enumerate()
        {
            pending.push((chunk_id(&source_id, ordinal), doc, w.text));
        }
    }
    if pending.is_empty() {
        return Err(IndexError::NoDocuments);
    }

    let batches: Vec<&[(String, &KnowledgeDocument, String)]> =
        pending.chunks(EMBED_BATCH).collect();
    type BatchResult = Result<Vec<EmbeddingVector>, ProviderError>;
    let results: Mutex<Vec<Option<BatchResult>>> = Mutex::new(vec![None; batches.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..parallelism.clamp(1, batches.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(batch) = batches.get(i) else { break };
                let texts: Vec<String> = batch.iter().map(|(_, _, t)| t.clone()).collect();
                let r = gateway.embed(&texts);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });

    let mut chunks = Vec::with_capacity(pending.len());
    let mut pending = pending.into_iter();
    for r in results.into_inner().unwrap() {
        for embedding in r.expect("every batch ran")? {
            let (id, doc, text) = pending.next().expect("one embedding per chunk");
            chunks.push(KnowledgeChunk {
                chunk_id: id,
                source_title: doc.title.clone(),
                source_url: doc.url.clone(),
                text,
                embedding,
            });
        }
    }
    let metadata = IndexMetadata {
        built_at: Utc::now().trunc_subsecs(0),
        embed_model: gateway.config().embed_model.clone(),
        chunk_size,
        overlap,
    };
    let index = VectorIndex::new(chunks, gateway.config().embed_dim, metadata)?;
    Ok(IngestOutcome { index, warnings })
}
