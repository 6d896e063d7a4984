//! Append-only JSONL store of recorded provider responses.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_hash: String,
    /// Canonical request, kept so recorded prompts can be audited offline.
    #[serde(default)]
    pub request: Value,
    pub response_body: String,
    pub recorded_at: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error(transparent)]
    Load(#[from] jsonl::JsonlError),
    #[error("cache write to {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Readers take a shared lock; all appends go through one writer mutex.
pub struct ReplayCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheEntry>>,
    order: RwLock<Vec<String>>,
    writer: Mutex<Option<File>>,
}

impl ReplayCache {
    pub fn in_memory() -> Self {
        ReplayCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            order: RwLock::new(Vec::new()),
            writer: Mutex::new(None),
        }
    }

    /// Load an existing cache file; a missing file is an empty cache.
    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let loaded: Vec<CacheEntry> = if path.exists() {
            jsonl::read(path)?
        } else {
            Vec::new()
        };
        let mut entries = HashMap::new();
        let mut order = Vec::new();
        for e in loaded {
            // first record wins; later duplicates never replace it
            if !entries.contains_key(&e.request_hash) {
                order.push(e.request_hash.clone());
                entries.insert(e.request_hash.clone(), e);
            }
        }
        Ok(ReplayCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            order: RwLock::new(order),
            writer: Mutex::new(None),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, hash: &str) -> Option<String> {
        self.entries
            .read()
            .unwrap()
            .get(hash)
            .map(|e| e.response_body.clone())
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries in recording order.
    pub fn entries(&self) -> Vec<CacheEntry> {
        let entries = self.entries.read().unwrap();
        self.order
            .read()
            .unwrap()
            .iter()
            .map(|h| entries[h].clone())
            .collect()
    }

    /// Append a new entry. Returns false (and writes nothing) if the hash is already recorded.
    pub fn record(&self, entry: CacheEntry) -> Result<bool, CacheError> {
        let mut writer = self.writer.lock().unwrap();
        if self
            .entries
            .read()
            .unwrap()
            .contains_key(&entry.request_hash)
        {
            return Ok(false);
        }
        if let Some(path) = &self.path {
            let err = |source| CacheError::Write {
                path: path.clone(),
                source,
            };
            if writer.is_none() {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent).map_err(err)?;
                }
                *writer = Some(
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(path)
                        .map_err(err)?,
                );
            }
            let mut line = serde_json::to_string(&entry).expect("cache entry serializes");
            line.push('\n');
            let file = writer.as_mut().unwrap();
            file.write_all(line.as_bytes()).map_err(err)?;
            file.flush().map_err(err)?;
        }
        self.order.write().unwrap().push(entry.request_hash.clone());
        self.entries
            .write()
            .unwrap()
            .insert(entry.request_hash.clone(), entry);
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(hash: &str, body: &str) -> CacheEntry {
        CacheEntry {
            request_hash: hash.into(),
            request: Value::Null,
            response_body: body.into(),
            recorded_at: DateTime::from_timestamp(0, 0).unwrap(),
        }
    }

    #[test]
    fn recording_never_overwrites() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = ReplayCache::open(&path).unwrap();
        assert!(cache.record(entry("h1", "first")).unwrap());
        assert!(!cache.record(entry("h1", "second")).unwrap());
        assert_eq!(cache.get("h1").as_deref(), Some("first"));

        let reopened = ReplayCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        assert_eq!(reopened.get("h1").as_deref(), Some("first"));
    }

    #[test]
    fn appends_preserve_existing_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        ReplayCache::open(&path)
            .unwrap()
            .record(entry("a", "1"))
            .unwrap();
        let before = fs::read_to_string(&path).unwrap();
        ReplayCache::open(&path)
            .unwrap()
            .record(entry("b", "2"))
            .unwrap();
        let after = fs::read_to_string(&path).unwrap();
        assert!(after.starts_with(&before));
        assert_eq!(after.lines().count(), 2);
    }
}
