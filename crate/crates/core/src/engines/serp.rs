//! SERP-API-style HTTP backend.
//!
//! Reads the `related_questions` ("People also ask") and `related_searches`
//! blocks of a Google results payload, and `images_results` for image search.
//! The backend id is sent as the `engine` parameter (`<id>_images` for image
//! search). Env keys: `SERPAPI_API_KEY` (required), `SERPAPI_ENDPOINT` (optional).

use std::collections::BTreeMap;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde_json::Value;

use super::{EngineError, ImageItem, QaItem, SearchBackend, SearchRequest, SearchResponse, SearchType};

pub const DEFAULT_SERPAPI_ENDPOINT: &str = "https://serpapi.com/search.json";

pub struct SerpApiBackend {
    http: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    id: String,
    image_engine: String,
}

impl SerpApiBackend {
    pub fn new(id: &str, endpoint: &str, api_key: &str, timeout: Duration) -> Result<Self, EngineError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EngineError::Config(e.to_string()))?;
        Ok(Self {
            http,
            endpoint: endpoint.to_string(),
            api_key: api_key.to_string(),
            id: id.to_string(),
            image_engine: format!("{id}_images"),
        })
    }

    pub fn from_env(id: &str, env: &BTreeMap<String, String>) -> Result<Self, EngineError> {
        let key = env
            .get("SERPAPI_API_KEY")
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| EngineError::Config("SERPAPI_API_KEY missing from env file".into()))?;
        let endpoint = env
            .get("SERPAPI_ENDPOINT")
            .map(String::as_str)
            .unwrap_or(DEFAULT_SERPAPI_ENDPOINT);
        Self::new(id, endpoint, key, Duration::from_secs(60))
    }

    fn params<'a>(&'a self, request: &'a SearchRequest) -> Vec<(&'static str, &'a str)> {
        let engine = match request.search_type {
            SearchType::Text => self.id.as_str(),
            SearchType::Images => self.image_engine.as_str(),
        };
        vec![
            ("engine", engine),
            ("q", request.query.as_str()),
            ("location", request.location.as_str()),
            ("gl", request.country_code.as_str()),
            ("hl", request.language.as_str()),
            ("api_key", self.api_key.as_str()),
        ]
    }
}

fn excerpt(body: &str) -> String {
    body.chars().take(300).collect()
}

fn is_quota_message(msg: &str) -> bool {
    let m = msg.to_ascii_lowercase();
    m.contains("run out of searches") || m.contains("quota")
}

fn str_field<'a>(v: &'a Value, key: &str) -> Option<&'a str> {
    v.get(key).and_then(Value::as_str).filter(|s| !s.trim().is_empty())
}

/// Normalizes a SERP API payload. Pure; used by the HTTP backend and tests.
pub fn parse_serpapi_payload(
    request: &SearchRequest,
    body: &str,
    fetched_at: DateTime<Utc>,
) -> Result<SearchResponse, EngineError> {
    let value: Value = serde_json::from_str(body).map_err(|e| EngineError::schema(e.to_string(), body))?;
    if !value.is_object() {
        return Err(EngineError::schema("payload is not a JSON object", body));
    }
    if let Some(err) = value.get("error").and_then(Value::as_str) {
        if is_quota_message(err) {
            return Err(EngineError::Quota(err.to_string()));
        }
        // "Google hasn't returned any results for this query."
        if !err.to_ascii_lowercase().contains("returned any results") {
            return Err(EngineError::schema(format!("engine error: {err}"), body));
        }
    }

    let mut response = SearchResponse::empty(request.clone(), body.to_string(), fetched_at);
    match request.search_type {
        SearchType::Text => {
            if let Some(items) = value.get("related_questions").and_then(Value::as_array) {
                for item in items {
                    match (
                        str_field(item, "question"),
                        str_field(item, "snippet"),
                        str_field(item, "link"),
                    ) {
                        (Some(q), Some(a), Some(l)) => response.qa_items.push(QaItem {
                            question: q.to_string(),
                            answer: a.to_string(),
                            source_url: l.to_string(),
                            source_title: str_field(item, "title").unwrap_or("").to_string(),
                        }),
                        _ => response.dropped_incomplete += 1,
                    }
                }
            }
            if let Some(items) = value.get("related_searches").and_then(Value::as_array) {
                response.related_queries = items
                    .iter()
                    .filter_map(|i| str_field(i, "query"))
                    .map(str::to_string)
                    .collect();
            }
        }
        SearchType::Images => {
            if let Some(items) = value.get("images_results").and_then(Value::as_array) {
                response.image_items = items
                    .iter()
                    .filter_map(|i| {
                        Some(ImageItem {
                            image_url: str_field(i, "original").or_else(|| str_field(i, "thumbnail"))?.to_string(),
                            source_page_url: str_field(i, "link")?.to_string(),
                            title: str_field(i, "title").unwrap_or("").to_string(),
                        })
                    })
                    .collect();
            }
        }
    }
    Ok(response)
}

impl SearchBackend for SerpApiBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn search(&self, request: &SearchRequest) -> Result<SearchResponse, EngineError> {
        request.validate()?;
        let resp = self
            .http
            .get(&self.endpoint)
            .query(&self.params(request))
            .send()
            .map_err(|e| EngineError::Transport {
                status: e.status().map(|s| s.as_u16()),
                body_excerpt: e.without_url().to_string(),
            })?;
        let status = resp.status();
        let body = resp.text().map_err(|e| EngineError::Transport {
            status: Some(status.as_u16()),
            body_excerpt: e.without_url().to_string(),
        })?;
        if !status.is_success() {
            if is_quota_message(&body) {
                return Err(EngineError::Quota(excerpt(&body)));
            }
            return Err(EngineError::Transport {
                status: Some(status.as_u16()),
                body_excerpt: excerpt(&body),
            });
        }
        parse_serpapi_payload(request, &body, Utc::now())
    }
}
