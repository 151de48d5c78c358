use std::collections::HashMap;
use std::num::NonZeroU32;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use backon::{BlockingRetryable, ExponentialBuilder};
use governor::clock::{Clock, DefaultClock};
use governor::{DefaultDirectRateLimiter, Quota, RateLimiter};
use serde::Serialize;
use tracing::warn;

use super::{EngineError, SearchBackend, SearchRequest, SearchResponse, SearchType};
use crate::cache::{cache_key, ResponseCache};

/// Attempts include the first call; delays double from `base_delay`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

/// Token bucket refilled at `per_second` requests per second, burst of one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateLimit {
    pub per_second: f64,
}

impl Default for RateLimit {
    fn default() -> Self {
        Self { per_second: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClientStats {
    /// Calls that reached the backend, retries included.
    pub dispatches: usize,
    /// Responses obtained from the backend.
    pub fetched: usize,
    /// Responses served from the persistent cache.
    pub cache_hits: usize,
    /// Responses served from this client's in-memory memo.
    pub memo_hits: usize,
    pub cache_write_failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchSource {
    Memo,
    Cache,
    Backend,
}

#[derive(Debug, Clone)]
pub struct Fetched {
    pub response: Arc<SearchResponse>,
    pub source: FetchSource,
}

/// Cache-first access to one backend with retries and rate limiting.
///
/// Safe to share across threads. Dispatch goes through the rate limiter, so
/// concurrent callers never exceed the configured request rate.
pub struct SearchClient {
    backend: Arc<dyn SearchBackend>,
    cache: Option<ResponseCache>,
    memo: Mutex<HashMap<String, Arc<SearchResponse>>>,
    limiter: Option<DefaultDirectRateLimiter>,
    retry: RetryPolicy,
    dispatches: AtomicUsize,
    fetched: AtomicUsize,
    cache_hits: AtomicUsize,
    memo_hits: AtomicUsize,
    cache_write_failures: AtomicUsize,
}

impl SearchClient {
    pub fn new(backend: Arc<dyn SearchBackend>) -> Self {
        Self {
            backend,
            cache: None,
            memo: Mutex::new(HashMap::new()),
            limiter: None,
            retry: RetryPolicy::default(),
            dispatches: AtomicUsize::new(0),
            fetched: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
            memo_hits: AtomicUsize::new(0),
            cache_write_failures: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, limit: Option<RateLimit>) -> Self {
        self.limiter = limit
            .filter(|l| l.per_second.is_finite() && l.per_second > 0.0)
            .and_then(|l| Quota::with_period(Duration::from_secs_f64(1.0 / l.per_second)))
            .map(|q| RateLimiter::direct(q.allow_burst(NonZeroU32::MIN)));
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            dispatches: self.dispatches.load(Ordering::SeqCst),
            fetched: self.fetched.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            memo_hits: self.memo_hits.load(Ordering::SeqCst),
            cache_write_failures: self.cache_write_failures.load(Ordering::SeqCst),
        }
    }

    fn wait_for_slot(&self) {
        if let Some(limiter) = &self.limiter {
            let clock = DefaultClock::default();
            while let Err(not_until) = limiter.check() {
                std::thread::sleep(not_until.wait_time_from(clock.now()));
            }
        }
    }

    fn dispatch(&self, request: &SearchRequest) -> Result<SearchResponse, EngineError> {
        let attempt = || {
            self.wait_for_slot();
            self.dispatches.fetch_add(1, Ordering::SeqCst);
            self.backend.search(request)
        };
        let backoff = ExponentialBuilder::default()
            .with_min_delay(self.retry.base_delay)
            .with_max_delay(self.retry.base_delay * 64)
            .with_max_times(self.retry.max_attempts.saturating_sub(1));
        attempt
            .retry(backoff)
            .sleep(std::thread::sleep)
            .when(EngineError::is_retriable)
            .notify(|err, dur| warn!(query = %request.query, %err, ?dur, "retrying search"))
            .call()
    }

    /// Returns the response for `request`, consulting the in-memory memo, then
    /// the persistent cache, then the backend. Only successes are stored.
    pub fn fetch(&self, request: &SearchRequest) -> Result<Fetched, EngineError> {
        request.validate()?;
        let key = cache_key(request);
        if let Some(hit) = self.memo.lock().unwrap().get(&key) {
            self.memo_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(Fetched {
                response: hit.clone(),
                source: FetchSource::Memo,
            });
        }
        let (response, source) = match self.cache.as_ref().and_then(|c| c.get(request)) {
            Some(hit) => {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                (hit, FetchSource::Cache)
            }
            None => {
                let response = self.dispatch(request)?;
                response.validate()?;
                self.fetched.fetch_add(1, Ordering::SeqCst);
                if let Some(cache) = &self.cache {
                    if let Err(e) = cache.put(request, &response) {
                        self.cache_write_failures.fetch_add(1, Ordering::SeqCst);
                        warn!(error = %e, "cache write failed; continuing with in-memory response");
                    }
                }
                (response, FetchSource::Backend)
            }
        };
        let response = Arc::new(response);
        self.memo.lock().unwrap().insert(key, response.clone());
        Ok(Fetched { response, source })
    }

    /// Question/answer pairs (and, in the same payload, related queries) for
    /// a text search.
    pub fn extract_qa(&self, request: &SearchRequest) -> Result<Fetched, EngineError> {
        if request.search_type != SearchType::Text {
            return Err(EngineError::Precondition("extract_qa requires a text search".into()));
        }
        self.fetch(request)
    }

    /// Related searches in engine order, duplicates preserved. Reuses the
    /// response fetched by [`Self::extract_qa`] when there was one.
    pub fn extract_related_queries(&self, request: &SearchRequest) -> Result<Vec<String>, EngineError> {
        if request.search_type != SearchType::Text {
            return Err(EngineError::Precondition(
                "related queries are only extracted for text searches".into(),
            ));
        }
        Ok(self.fetch(request)?.response.related_queries.clone())
    }

    pub fn image_search(&self, request: &SearchRequest) -> Result<Fetched, EngineError> {
        if request.search_type != SearchType::Images {
            return Err(EngineError::Precondition("image_search requires search_type=images".into()));
        }
        self.fetch(request)
    }
}
