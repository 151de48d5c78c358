//! Search backends normalized to two primitives: question/answer extraction
//! from the related-question panel, and related-query extraction.

mod client;
mod mock;
mod serp;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use client::{ClientStats, FetchSource, Fetched, RateLimit, RetryPolicy, SearchClient};
pub use mock::{FailMode, MockBackend, MOCK_FETCHED_AT};
pub use serp::{parse_serpapi_payload, SerpApiBackend, DEFAULT_SERPAPI_ENDPOINT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchType {
    Text,
    Images,
}

impl SearchType {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchType::Text => "text",
            SearchType::Images => "images",
        }
    }
}

impl fmt::Display for SearchType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SearchType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" => Ok(SearchType::Text),
            "images" | "image" => Ok(SearchType::Images),
            other => Err(format!("unknown search type {other:?} (expected text or images)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("search request transport failure (status {status:?}): {body_excerpt}")]
    Transport {
        status: Option<u16>,
        body_excerpt: String,
    },
    #[error("search quota exhausted: {0}")]
    Quota(String),
    #[error("unparseable search payload ({message}); payload sha256 {payload_ref}")]
    Schema { message: String, payload_ref: String },
    #[error("invalid search request: {0}")]
    Precondition(String),
    #[error("engine configuration: {0}")]
    Config(String),
}

impl EngineError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, EngineError::Transport { .. })
    }

    pub(crate) fn schema(message: impl Into<String>, payload: &str) -> Self {
        EngineError::Schema {
            message: message.into(),
            payload_ref: hex::encode(Sha256::digest(payload.as_bytes())),
        }
    }
}

fn country_code_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[a-z]{2}$").unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SearchRequest {
    pub engine: String,
    pub search_type: SearchType,
    pub query: String,
    pub location: String,
    pub country_code: String,
    pub language: String,
}

impl SearchRequest {
    pub fn new(
        engine: &str,
        search_type: SearchType,
        query: &str,
        location: &str,
        country_code: &str,
        language: &str,
    ) -> Result<Self, EngineError> {
        let req = Self {
            engine: engine.to_string(),
            search_type,
            query: query.to_string(),
            location: location.to_string(),
            country_code: country_code.to_string(),
            language: language.to_string(),
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.query.trim().is_empty() {
            return Err(EngineError::Precondition("query must not be empty".into()));
        }
        if !country_code_re().is_match(&self.country_code) {
            return Err(EngineError::Precondition(format!(
                "country_code {:?} must be two lowercase letters",
                self.country_code
            )));
        }
        Ok(())
    }

    /// Same parameters, different query text.
    pub fn with_query(&self, query: &str) -> Self {
        Self {
            query: query.to_string(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub question: String,
    pub answer: String,
    pub source_url: String,
    #[serde(default)]
    pub source_title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageItem {
    pub image_url: String,
    pub source_page_url: String,
    #[serde(default)]
    pub title: String,
}

/// Engine-normalized result for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub request: SearchRequest,
    pub qa_items: Vec<QaItem>,
    pub related_queries: Vec<String>,
    pub image_items: Vec<ImageItem>,
    /// Payload exactly as returned by the backend.
    pub raw_payload: String,
    pub fetched_at: DateTime<Utc>,
    /// Panel entries dropped for lacking an answer snippet or source link.
    #[serde(default)]
    pub dropped_incomplete: usize,
}

impl SearchResponse {
    pub fn empty(request: SearchRequest, raw_payload: String, fetched_at: DateTime<Utc>) -> Self {
        Self {
            request,
            qa_items: Vec::new(),
            related_queries: Vec::new(),
            image_items: Vec::new(),
            raw_payload,
            fetched_at,
            dropped_incomplete: 0,
        }
    }

    /// Checks the per-type surface invariants.
    pub fn validate(&self) -> Result<(), EngineError> {
        match self.request.search_type {
            SearchType::Text if !self.image_items.is_empty() => Err(EngineError::Precondition(
                "text response carries image items".into(),
            )),
            SearchType::Images if !self.qa_items.is_empty() => Err(EngineError::Precondition(
                "image response carries qa items".into(),
            )),
            _ => {
                if self
                    .qa_items
                    .iter()
                    .any(|q| q.question.trim().is_empty() || q.source_url.trim().is_empty())
                {
                    return Err(EngineError::Precondition(
                        "qa item without question or source url".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// A search engine. Implementations must be callable from several threads.
pub trait SearchBackend: Send + Sync {
    /// Identifier recorded on harvested records and cache entries.
    fn id(&self) -> &str;

    /// One dispatch to the engine, without retries or caching.
    fn search(&self, request: &SearchRequest) -> Result<SearchResponse, EngineError>;
}
