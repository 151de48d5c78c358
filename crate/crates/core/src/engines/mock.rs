//! Deterministic offline backend driven by a JSON fixture.
//!
//! The fixture is a JSON object keyed by exact query string:
//!
//! ```json
//! {
//!   "visit Baladna Farm in Qatar": {
//!     "qa_items": [{"question": "...", "answer": "...", "source_url": "...", "source_title": "..."}],
//!     "related_queries": ["..."],
//!     "image_items": [{"image_url": "...", "source_page_url": "...", "title": "..."}]
//!   }
//! }
//! ```
//!
//! Every key of an entry is optional. A qa item whose `answer` is missing,
//! null or blank is dropped and counted in `dropped_incomplete`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, TimeZone, Utc};
use serde::Deserialize;
use serde_json::Value;

use super::{EngineError, ImageItem, QaItem, SearchBackend, SearchRequest, SearchResponse, SearchType};

/// Timestamp stamped on every mock response so identical requests produce
/// byte-identical responses.
pub const MOCK_FETCHED_AT: i64 = 1_704_067_200; // 2024-01-01T00:00:00Z

#[derive(Debug, Deserialize)]
struct RawQa {
    #[serde(default)]
    question: Option<String>,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    source_url: Option<String>,
    #[serde(default)]
    source_title: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct RawEntry {
    #[serde(default)]
    qa_items: Vec<RawQa>,
    #[serde(default)]
    related_queries: Vec<String>,
    #[serde(default)]
    image_items: Vec<ImageItem>,
}

/// Injected failure for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailMode {
    /// Fails with a retriable transport error this many times, then succeeds.
    Transient(usize),
    /// Always fails with a retriable transport error.
    Always,
    /// Fails with a terminal quota error.
    Quota,
}

pub struct MockBackend {
    id: String,
    entries: HashMap<String, Value>,
    fetched_at: DateTime<Utc>,
    calls: AtomicUsize,
    failures: Mutex<HashMap<String, (FailMode, usize)>>,
}

impl MockBackend {
    pub fn from_value(fixture: Value) -> Result<Self, EngineError> {
        let Value::Object(map) = fixture else {
            return Err(EngineError::Config("mock fixture must be a JSON object keyed by query".into()));
        };
        for (query, entry) in &map {
            serde_json::from_value::<RawEntry>(entry.clone()).map_err(|e| {
                EngineError::Config(format!("mock fixture entry {query:?}: {e}"))
            })?;
        }
        Ok(Self {
            id: "mock".into(),
            entries: map.into_iter().collect(),
            fetched_at: Utc.timestamp_opt(MOCK_FETCHED_AT, 0).unwrap(),
            calls: AtomicUsize::new(0),
            failures: Mutex::new(HashMap::new()),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| EngineError::Config(format!("mock fixture is not valid JSON: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_path(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::Config(format!("reading mock fixture {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn with_failure(self, query: &str, mode: FailMode) -> Self {
        self.failures.lock().unwrap().insert(query.to_string(), (mode, 0));
        self
    }

    /// Number of dispatches received so far, including failed ones.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    fn injected_failure(&self, query: &str) -> Option<EngineError> {
        let mut failures = self.failures.lock().unwrap();
        let (mode, seen) = failures.get_mut(query)?;
        *seen += 1;
        let transient = || EngineError::Transport {
            status: Some(503),
            body_excerpt: format!("injected failure for {query:?}"),
        };
        match *mode {
            FailMode::Transient(n) if *seen <= n => Some(transient()),
            FailMode::Transient(_) => None,
            FailMode::Always => Some(transient()),
            FailMode::Quota => Some(EngineError::Quota(format!("injected quota error for {query:?}"))),
        }
    }
}

impl SearchBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn search(&self, request: &SearchRequest) -> Result<SearchResponse, EngineError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        if let Some(err) = self.injected_failure(&request.query) {
            return Err(err);
        }
        let Some(value) = self.entries.get(&request.query) else {
            return Ok(SearchResponse::empty(request.clone(), "{}".into(), self.fetched_at));
        };
        let raw_payload = value.to_string();
        let entry: RawEntry = serde_json::from_value(value.clone())
            .map_err(|e| EngineError::schema(e.to_string(), &raw_payload))?;
        let mut response = SearchResponse::empty(request.clone(), raw_payload, self.fetched_at);
        match request.search_type {
            SearchType::Text => {
                for qa in entry.qa_items {
                    let question = qa.question.unwrap_or_default();
                    let answer = qa.answer.unwrap_or_default();
                    let source_url = qa.source_url.unwrap_or_default();
                    if question.trim().is_empty() || answer.trim().is_empty() || source_url.trim().is_empty() {
                        response.dropped_incomplete += 1;
                        continue;
                    }
                    response.qa_items.push(QaItem {
                        question,
                        answer,
                        source_url,
                        source_title: qa.source_title.unwrap_or_default(),
                    });
                }
                response.related_queries = entry.related_queries;
            }
            SearchType::Images => response.image_items = entry.image_items,
        }
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn req(q: &str, t: SearchType) -> SearchRequest {
        SearchRequest::new("mock", t, q, "Doha, Qatar", "qa", "en").unwrap()
    }

    fn fixture() -> MockBackend {
        MockBackend::from_value(json!({
            "q0": {
                "qa_items": [
                    {"question": "a?", "answer": "A", "source_url": "https://x.com/a"},
                    {"question": "b?", "source_url": "https://x.com/b"},
                    {"question": "c?", "answer": null, "source_url": "https://x.com/c"}
                ],
                "related_queries": ["q1", "q2", "q1"]
            },
            "dress": {
                "image_items": [
                    {"image_url": "https://img.example/1.jpg", "source_page_url": "https://example.com/1", "title": "one"}
                ]
            }
        }))
        .unwrap()
    }

    #[test]
    fn text_search_drops_incomplete_and_keeps_duplicates_in_related() {
        let m = fixture();
        let r = m.search(&req("q0", SearchType::Text)).unwrap();
        assert_eq!(r.qa_items.len(), 1);
        assert_eq!(r.dropped_incomplete, 2);
        assert_eq!(r.related_queries, vec!["q1", "q2", "q1"]);
        assert!(r.image_items.is_empty());
        r.validate().unwrap();
    }

    #[test]
    fn unknown_query_is_empty() {
        let m = fixture();
        let r = m.search(&req("nothing", SearchType::Text)).unwrap();
        assert!(r.qa_items.is_empty() && r.related_queries.is_empty());
        assert_eq!(m.calls(), 1);
    }

    #[test]
    fn image_search_ignores_text_surfaces() {
        let m = fixture();
        let r = m.search(&req("dress", SearchType::Images)).unwrap();
        assert_eq!(r.image_items.len(), 1);
        let r = m.search(&req("q0", SearchType::Images)).unwrap();
        assert!(r.qa_items.is_empty() && r.image_items.is_empty());
    }

    #[test]
    fn identical_requests_are_byte_identical() {
        let m = fixture();
        let a = serde_json::to_vec(&m.search(&req("q0", SearchType::Text)).unwrap()).unwrap();
        let b = serde_json::to_vec(&m.search(&req("q0", SearchType::Text)).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn injected_failures() {
        let m = fixture()
            .with_failure("q0", FailMode::Transient(1))
            .with_failure("x", FailMode::Quota);
        assert!(m.search(&req("q0", SearchType::Text)).unwrap_err().is_retriable());
        assert!(m.search(&req("q0", SearchType::Text)).is_ok());
        assert!(matches!(
            m.search(&req("x", SearchType::Text)),
            Err(EngineError::Quota(_))
        ));
    }

    #[test]
    fn rejects_malformed_fixture() {
        assert!(MockBackend::from_json("[1,2]").is_err());
        assert!(MockBackend::from_json(r#"{"q": {"related_queries": 3}}"#).is_err());
    }
}
