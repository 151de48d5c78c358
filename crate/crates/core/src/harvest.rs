//! Bootstrapped harvesting: repeatedly query the pool, collect the
//! related-question pairs and grow the pool with related queries.
//!
//! By default only the frontier (queries added in the previous round) is
//! fetched. Re-fetching older pool entries cannot add anything: their
//! responses are memoized and their pairs and related queries are already
//! merged. `full_pool` restores the literal re-iteration over the whole pool.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::engines::{EngineError, FetchSource, Fetched, ImageItem, SearchClient, SearchRequest, SearchType};
use crate::model::{QaRecord, Reliability};
use crate::seedgen::SeedSet;
use crate::text::{canonicalize, CanonicalKey, Deduplicator};

#[derive(Debug, Error)]
pub enum HarvestError {
    #[error("harvest aborted in iteration {iteration}: {source}")]
    Engine {
        iteration: u32,
        #[source]
        source: EngineError,
    },
    #[error("every query of iteration {iteration} failed ({failures} queries)")]
    IterationFailed { iteration: u32, failures: usize },
    #[error("iteration {iteration} is already at n_iter {n_iter}")]
    Finished { iteration: u32, n_iter: u32 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub text: String,
    /// Seed this query descends from.
    pub seed_id: String,
    pub topic: String,
    /// Iteration in which the query joined the pool (0 for seeds).
    pub added_in: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestCounters {
    pub fetched: usize,
    pub cache_hits: usize,
    pub dropped_duplicates: usize,
    pub dropped_incomplete: usize,
    pub failed_queries: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HarvestOptions {
    pub n_iter: u32,
    pub full_pool: bool,
    pub parallelism: usize,
}

impl Default for HarvestOptions {
    fn default() -> Self {
        Self {
            n_iter: 1,
            full_pool: false,
            parallelism: 1,
        }
    }
}

/// Query pool, frontier and accumulated pairs.
#[derive(Debug, Clone)]
pub struct HarvestState {
    query_pool: Vec<PoolEntry>,
    pool_keys: HashSet<CanonicalKey>,
    frontier: Vec<usize>,
    qa_set: Vec<QaRecord>,
    questions: Deduplicator,
    iteration: u32,
    counters: HarvestCounters,
}

impl HarvestState {
    pub fn from_seeds(seeds: &SeedSet) -> Self {
        let mut state = Self {
            query_pool: Vec::new(),
            pool_keys: HashSet::new(),
            frontier: Vec::new(),
            qa_set: Vec::new(),
            questions: Deduplicator::default(),
            iteration: 0,
            counters: HarvestCounters::default(),
        };
        for seed in &seeds.queries {
            if let Some(idx) = state.add_query(PoolEntry {
                text: seed.text.clone(),
                seed_id: seed.id.clone(),
                topic: seed.topic.clone(),
                added_in: 0,
            }) {
                state.frontier.push(idx);
            }
        }
        state
    }

    fn add_query(&mut self, entry: PoolEntry) -> Option<usize> {
        let key = canonicalize(&entry.text);
        if key.is_empty() || !self.pool_keys.insert(key) {
            return None;
        }
        self.query_pool.push(entry);
        Some(self.query_pool.len() - 1)
    }

    pub fn query_pool(&self) -> &[PoolEntry] {
        &self.query_pool
    }

    pub fn frontier(&self) -> impl Iterator<Item = &PoolEntry> {
        self.frontier.iter().map(|&i| &self.query_pool[i])
    }

    pub fn qa_set(&self) -> &[QaRecord] {
        &self.qa_set
    }

    pub fn into_qa_set(self) -> Vec<QaRecord> {
        self.qa_set
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn counters(&self) -> HarvestCounters {
        self.counters
    }
}

/// Per-query parameters shared by every request of a harvest. The template's
/// `query` field is replaced for each pool entry.
pub fn request_for(template: &SearchRequest, query: &str) -> SearchRequest {
    SearchRequest {
        search_type: SearchType::Text,
        ..template.with_query(query)
    }
}

fn fetch_all(
    client: &SearchClient,
    template: &SearchRequest,
    queries: &[&PoolEntry],
    parallelism: usize,
) -> Vec<Result<Fetched, EngineError>> {
    let fetch = |q: &&PoolEntry| client.extract_qa(&request_for(template, &q.text));
    if parallelism <= 1 {
        return queries.iter().map(fetch).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        Ok(pool) => pool.install(|| queries.par_iter().map(fetch).collect()),
        Err(e) => {
            warn!(error = %e, "falling back to sequential fetching");
            queries.iter().map(fetch).collect()
        }
    }
}

/// Runs one round: fetch, merge pairs (first occurrence wins, exact then
/// near-duplicate on questions), merge related queries, advance the frontier.
pub fn run_iteration(
    state: &mut HarvestState,
    client: &SearchClient,
    template: &SearchRequest,
    options: &HarvestOptions,
) -> Result<(), HarvestError> {
    if state.iteration >= options.n_iter {
        return Err(HarvestError::Finished {
            iteration: state.iteration,
            n_iter: options.n_iter,
        });
    }
    let iteration = state.iteration + 1;
    let targets: Vec<usize> = if options.full_pool {
        (0..state.query_pool.len()).collect()
    } else {
        state.frontier.clone()
    };
    let entries: Vec<&PoolEntry> = targets.iter().map(|&i| &state.query_pool[i]).collect();
    let results = fetch_all(client, template, &entries, options.parallelism);
    let entries: Vec<PoolEntry> = entries.into_iter().cloned().collect();

    let mut failures = 0;
    let mut new_frontier = Vec::new();
    for (entry, result) in entries.iter().zip(results) {
        let fetched = match result {
            Ok(f) => f,
            Err(e @ EngineError::Quota(_)) | Err(e @ EngineError::Config(_)) => {
                return Err(HarvestError::Engine { iteration, source: e });
            }
            Err(e) => {
                warn!(query = %entry.text, error = %e, "skipping query");
                failures += 1;
                continue;
            }
        };
        let response = &fetched.response;
        match fetched.source {
            FetchSource::Backend => state.counters.fetched += 1,
            FetchSource::Cache => state.counters.cache_hits += 1,
            FetchSource::Memo => {}
        }
        if fetched.source != FetchSource::Memo {
            state.counters.dropped_incomplete += response.dropped_incomplete;
        }
        for item in &response.qa_items {
            if state.questions.insert(canonicalize(&item.question)).is_err() {
                state.counters.dropped_duplicates += 1;
                continue;
            }
            state.qa_set.push(QaRecord {
                question: item.question.clone(),
                answer: item.answer.clone(),
                source_url: item.source_url.clone(),
                engine: client.backend_id().to_string(),
                seed_id: entry.seed_id.clone(),
                query_text: entry.text.clone(),
                iteration,
                location: template.location.clone(),
                language: template.language.clone(),
                topic: entry.topic.clone(),
                collected_at: response.fetched_at,
                reliability: Reliability::Unchecked,
                annotation: None,
                annotation_failed: false,
            });
        }
        for related in &response.related_queries {
            if let Some(idx) = state.add_query(PoolEntry {
                text: related.clone(),
                seed_id: entry.seed_id.clone(),
                topic: entry.topic.clone(),
                added_in: iteration,
            }) {
                new_frontier.push(idx);
            }
        }
    }
    state.counters.failed_queries += failures;
    if failures > 0 && failures == targets.len() {
        return Err(HarvestError::IterationFailed { iteration, failures });
    }
    state.frontier = new_frontier;
    state.iteration = iteration;
    info!(
        iteration,
        pool = state.query_pool.len(),
        qa = state.qa_set.len(),
        frontier = state.frontier.len(),
        "iteration complete"
    );
    Ok(())
}

/// Continues `state` until `options.n_iter` rounds have run, writing a
/// checkpoint after each round when a path is given.
pub fn resume_harvest(
    mut state: HarvestState,
    client: &SearchClient,
    template: &SearchRequest,
    options: &HarvestOptions,
    checkpoint: Option<&Path>,
) -> Result<HarvestState, HarvestError> {
    while state.iteration < options.n_iter {
        run_iteration(&mut state, client, template, options)?;
        if let Some(path) = checkpoint {
            state.write_checkpoint(path)?;
        }
    }
    Ok(state)
}

/// Runs `options.n_iter` rounds from the seed set.
pub fn run_harvest(
    seeds: &SeedSet,
    client: &SearchClient,
    template: &SearchRequest,
    options: &HarvestOptions,
    checkpoint: Option<&Path>,
) -> Result<HarvestState, HarvestError> {
    resume_harvest(HarvestState::from_seeds(seeds), client, template, options, checkpoint)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CheckpointLine {
    Header {
        iteration: u32,
        counters: HarvestCounters,
    },
    Query {
        #[serde(flatten)]
        entry: PoolEntry,
        frontier: bool,
    },
    Qa {
        record: QaRecord,
    },
}

impl HarvestState {
    /// Writes the state as JSONL (header, pool, pairs) via an atomic rename.
    pub fn write_checkpoint(&self, path: &Path) -> Result<(), HarvestError> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)?;
        let tmp = tempfile::NamedTempFile::new_in(dir)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            let frontier: HashSet<usize> = self.frontier.iter().copied().collect();
            let mut line = |l: &CheckpointLine| -> Result<(), HarvestError> {
                serde_json::to_writer(&mut w, l).map_err(|e| HarvestError::Checkpoint(e.to_string()))?;
                w.write_all(b"\n")?;
                Ok(())
            };
            line(&CheckpointLine::Header {
                iteration: self.iteration,
                counters: self.counters,
            })?;
            for (i, entry) in self.query_pool.iter().enumerate() {
                line(&CheckpointLine::Query {
                    entry: entry.clone(),
                    frontier: frontier.contains(&i),
                })?;
            }
            for record in &self.qa_set {
                line(&CheckpointLine::Qa { record: record.clone() })?;
            }
            w.flush()?;
        }
        tmp.persist(path).map_err(|e| HarvestError::Io(e.error))?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, HarvestError> {
        let reader = BufReader::new(File::open(path)?);
        let mut state = Self::from_seeds(&SeedSet {
            queries: Vec::new(),
            location: String::new(),
            language: String::new(),
        });
        let mut saw_header = false;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CheckpointLine = serde_json::from_str(&line)
                .map_err(|e| HarvestError::Checkpoint(format!("line {}: {e}", n + 1)))?;
            match parsed {
                CheckpointLine::Header { iteration, counters } => {
                    state.iteration = iteration;
                    state.counters = counters;
                    saw_header = true;
                }
                CheckpointLine::Query { entry, frontier } => {
                    if let Some(idx) = state.add_query(entry) {
                        if frontier {
                            state.frontier.push(idx);
                        }
                    }
                }
                CheckpointLine::Qa { record } => {
                    if state.questions.insert(record.question_key()).is_ok() {
                        state.qa_set.push(record);
                    }
                }
            }
        }
        if !saw_header {
            return Err(HarvestError::Checkpoint("missing header line".into()));
        }
        Ok(state)
    }
}

/// One image result attributed to the seed that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub query_text: String,
    pub image_url: String,
    pub source_page_url: String,
    pub title: String,
    pub engine: String,
    pub seed_id: String,
    pub location: String,
    pub language: String,
    pub topic: String,
}

/// Image search over the seeds. Image results carry no related queries, so
/// there is no expansion; duplicate image URLs keep their first occurrence.
pub fn collect_images(
    seeds: &SeedSet,
    client: &SearchClient,
    template: &SearchRequest,
) -> Result<Vec<ImageRecord>, HarvestError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut failures = 0;
    for seed in &seeds.queries {
        let request = SearchRequest {
            search_type: SearchType::Images,
            ..template.with_query(&seed.text)
        };
        let fetched = match client.image_search(&request) {
            Ok(f) => f,
            Err(e @ EngineError::Quota(_)) | Err(e @ EngineError::Config(_)) => {
                return Err(HarvestError::Engine { iteration: 1, source: e });
            }
            Err(e) => {
                warn!(query = %seed.text, error = %e, "skipping image query");
                failures += 1;
                continue;
            }
        };
        for ImageItem {
            image_url,
            source_page_url,
            title,
        } in &fetched.response.image_items
        {
            if !seen.insert(image_url.clone()) {
                continue;
            }
            out.push(ImageRecord {
                query_text: seed.text.clone(),
                image_url: image_url.clone(),
                source_page_url: source_page_url.clone(),
                title: title.clone(),
                engine: client.backend_id().to_string(),
                seed_id: seed.id.clone(),
                location: template.location.clone(),
                language: template.language.clone(),
                topic: seed.topic.clone(),
            });
        }
    }
    if failures > 0 && failures == seeds.queries.len() {
        return Err(HarvestError::IterationFailed { iteration: 1, failures });
    }
    Ok(out)
}
