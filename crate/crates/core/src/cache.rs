//! Persistent, request-keyed store of successful search responses.
//!
//! Layout: `<root>/<first two hex chars>/<64-hex key>.json`, one
//! self-describing JSON entry per file. Writes go through a temp file in the
//! same directory followed by an atomic rename.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::warn;

use crate::engines::{SearchRequest, SearchResponse};
use crate::text::canonicalize;

/// Environment variable naming the cache root when no flag is given.
pub const CACHE_DIR_ENV: &str = "NATIVQA_CACHE_DIR";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("response does not belong to the request being stored")]
    Mismatch,
    #[error("refusing to cache invalid response: {0}")]
    InvalidResponse(String),
    #[error("serializing cache entry: {0}")]
    Serialize(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    /// Request as issued, before query canonicalization.
    pub request: SearchRequest,
    pub response: SearchResponse,
    pub stored_at: DateTime<Utc>,
    pub engine_version: String,
}

/// Canonical serialization of the fields that identify a request: a JSON
/// object with lexicographically sorted keys and the query canonicalized.
pub fn canonical_request(request: &SearchRequest) -> String {
    let query = canonicalize(&request.query);
    let fields: BTreeMap<&str, &str> = [
        ("country_code", request.country_code.as_str()),
        ("engine", request.engine.as_str()),
        ("language", request.language.as_str()),
        ("location", request.location.as_str()),
        ("query", query.as_str()),
        ("search_type", request.search_type.as_str()),
    ]
    .into_iter()
    .collect();
    serde_json::to_string(&fields).expect("string map serializes")
}

/// SHA-256 of [`canonical_request`], lowercase hex.
pub fn cache_key(request: &SearchRequest) -> String {
    hex::encode(Sha256::digest(canonical_request(request).as_bytes()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub writes: u64,
}

#[derive(Debug)]
pub struct ResponseCache {
    root: PathBuf,
    max_age: Option<Duration>,
    hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
    writes: AtomicU64,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| CacheError::Io {
            path: root.clone(),
            source,
        })?;
        Ok(Self {
            root,
            max_age: None,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
            writes: AtomicU64::new(0),
        })
    }

    /// Entries older than `max_age` are treated as misses.
    pub fn with_max_age(mut self, max_age: Option<Duration>) -> Self {
        self.max_age = max_age;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
            writes: self.writes.load(Ordering::Relaxed),
        }
    }

    fn miss(&self) -> Option<SearchResponse> {
        self.misses.fetch_add(1, Ordering::Relaxed);
        None
    }

    fn evict(&self, path: &Path, reason: &str) {
        warn!(path = %path.display(), reason, "evicting corrupt cache entry");
        let _ = fs::remove_file(path);
        self.evictions.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self, request: &SearchRequest) -> Option<SearchResponse> {
        let key = cache_key(request);
        let path = self.entry_path(&key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(_) => return self.miss(),
        };
        let entry: CacheEntry = match serde_json::from_slice(&bytes) {
            Ok(e) => e,
            Err(e) => {
                self.evict(&path, &e.to_string());
                return self.miss();
            }
        };
        if entry.key != key || cache_key(&entry.response.request) != key {
            self.evict(&path, "key mismatch");
            return self.miss();
        }
        if let Some(max_age) = self.max_age {
            let age = Utc::now().signed_duration_since(entry.stored_at);
            if age.to_std().is_ok_and(|a| a > max_age) {
                return self.miss();
            }
        }
        self.hits.fetch_add(1, Ordering::Relaxed);
        Some(entry.response)
    }

    /// Stores a successful response, replacing any entry under the same key.
    pub fn put(&self, request: &SearchRequest, response: &SearchResponse) -> Result<(), CacheError> {
        let key = cache_key(request);
        if cache_key(&response.request) != key {
            return Err(CacheError::Mismatch);
        }
        response
            .validate()
            .map_err(|e| CacheError::InvalidResponse(e.to_string()))?;
        let entry = CacheEntry {
            key: key.clone(),
            request: request.clone(),
            response: response.clone(),
            stored_at: Utc::now(),
            engine_version: request.engine.clone(),
        };
        let path = self.entry_path(&key);
        let dir = path.parent().expect("entry path has a parent");
        let io_err = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(dir).map_err(io_err)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
        serde_json::to_writer_pretty(&mut tmp, &entry)?;
        tmp.write_all(b"\n").map_err(io_err)?;
        tmp.as_file().sync_all().map_err(io_err)?;
        tmp.persist(&path).map_err(|e| io_err(e.error))?;
        self.writes.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }
}
