//! Seed query collection: manual CSV input, location templates and LLM
//! generation, followed by exact and near-duplicate filtering.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, BufRead, Read, Write};
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::llm::{CompletionBackend, CompletionRequest, LlmError, PromptTemplate};
use crate::model::{SeedOrigin, SeedQuery};
use crate::text::{canonicalize, CanonicalKey, Deduplicator};

/// Literal placeholder substituted by [`expand_templates`]. Case-sensitive.
pub const LOCATION_PLACEHOLDER: &str = "[LOCATION]";

#[derive(Debug, Error)]
pub enum SeedError {
    #[error("no seed queries")]
    NoSeeds,
    #[error("all seeds filtered")]
    AllFiltered,
    #[error("empty generation")]
    EmptyGeneration,
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("seed CSV is missing a `{0}` column")]
    MissingColumn(&'static str),
    #[error("location must not be empty")]
    EmptyLocation,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTemplate {
    pub id: String,
    pub pattern: String,
    pub topic: String,
}

/// Filtered, ordered seed queries for one location and language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub queries: Vec<SeedQuery>,
    pub location: String,
    pub language: String,
}

impl SeedSet {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name))
}

/// Reads seeds from a CSV with header `id,topic,query` (`id` optional).
/// Rows with a blank query are skipped; no filtering happens here.
pub fn load_manual_seeds<R: Read>(
    reader: R,
    location: &str,
    language: &str,
) -> Result<Vec<SeedQuery>, SeedError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let query_col = column(&headers, "query").ok_or(SeedError::MissingColumn("query"))?;
    let topic_col = column(&headers, "topic").ok_or(SeedError::MissingColumn("topic"))?;
    let id_col = column(&headers, "id");

    let mut seeds = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| SeedError::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let text = row.get(query_col).unwrap_or("").trim();
        if text.is_empty() {
            warn!(line, "skipping seed row with blank query");
            continue;
        }
        let id = id_col
            .and_then(|c| row.get(c))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| format!("manual-{line:04}"));
        seeds.push(SeedQuery {
            id,
            text: text.to_string(),
            topic: row.get(topic_col).unwrap_or("").trim().to_string(),
            location: location.to_string(),
            language: language.to_string(),
            origin: SeedOrigin::Manual,
        });
    }
    if seeds.is_empty() {
        return Err(SeedError::NoSeeds);
    }
    Ok(seeds)
}

/// Reads templates from a CSV with header `id,topic,pattern`, or from plain
/// text with one pattern per line (topic `General`, ids by line number).
pub fn load_templates(content: &str) -> Result<Vec<QueryTemplate>, SeedError> {
    let first = content.lines().next().unwrap_or("");
    let is_csv = first.split(',').any(|h| h.trim().eq_ignore_ascii_case("pattern"));
    if !is_csv {
        return Ok(content
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|(i, l)| QueryTemplate {
                id: format!("t{}", i + 1),
                pattern: l.trim().to_string(),
                topic: "General".into(),
            })
            .collect());
    }
    let mut rdr = csv::Reader::from_reader(content.as_bytes());
    let headers = rdr.headers()?.clone();
    let pattern_col = column(&headers, "pattern").ok_or(SeedError::MissingColumn("pattern"))?;
    let topic_col = column(&headers, "topic");
    let id_col = column(&headers, "id");
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| SeedError::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        out.push(QueryTemplate {
            id: id_col
                .and_then(|c| row.get(c))
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().to_string())
                .unwrap_or_else(|| format!("t{}", i + 1)),
            pattern: row.get(pattern_col).unwrap_or("").trim().to_string(),
            topic: topic_col
                .and_then(|c| row.get(c))
                .map(|s| s.trim().to_string())
                .unwrap_or_else(|| "General".into()),
        });
    }
    Ok(out)
}

/// Substitutes every `[LOCATION]` in each pattern. Patterns without the
/// placeholder pass through verbatim; blank patterns are dropped.
pub fn expand_templates(
    templates: &[QueryTemplate],
    location: &str,
    language: &str,
) -> Result<Vec<SeedQuery>, SeedError> {
    if location.trim().is_empty() {
        return Err(SeedError::EmptyLocation);
    }
    Ok(templates
        .iter()
        .filter(|t| !t.pattern.trim().is_empty())
        .map(|t| SeedQuery {
            id: format!("template-{}", t.id),
            text: t.pattern.replace(LOCATION_PLACEHOLDER, location),
            topic: t.topic.clone(),
            location: location.to_string(),
            language: language.to_string(),
            origin: SeedOrigin::Template,
        })
        .collect())
}

fn enumeration_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\(?\d+\s*[.)\]:\-–]|[-*•·])\s*").unwrap())
}

/// Splits a completion into queries: one per line, blank lines dropped,
/// leading list markers (`1.`, `2)`, `-`, `*`) removed.
pub fn parse_generated_lines(completion: &str) -> Vec<String> {
    completion
        .lines()
        .map(|l| enumeration_marker().replace(l, "").trim().to_string())
        .filter(|l| !l.is_empty())
        .collect()
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with('_') && !out.is_empty() {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_string()
}

/// Asks the backend for `count` queries on one topic.
pub fn generate_llm_seeds(
    backend: &dyn CompletionBackend,
    template: &PromptTemplate,
    location: &str,
    language: &str,
    topic: &str,
    count: usize,
) -> Result<Vec<SeedQuery>, SeedError> {
    let count = count.max(1);
    let vars: BTreeMap<String, String> = [
        ("location", location.to_string()),
        ("topic", topic.to_string()),
        ("language", language.to_string()),
        ("count", count.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let request = CompletionRequest::render(template, vars);
    let completion = backend.complete(&request)?;
    let lines = parse_generated_lines(&completion);
    if lines.is_empty() {
        return Err(SeedError::EmptyGeneration);
    }
    let topic_slug = slug(topic);
    Ok(lines
        .into_iter()
        .take(count)
        .enumerate()
        .map(|(i, text)| SeedQuery {
            id: format!("llm-{topic_slug}-{:03}", i + 1),
            text,
            topic: topic.to_string(),
            location: location.to_string(),
            language: language.to_string(),
            origin: SeedOrigin::Llm,
        })
        .collect())
}

/// Runs [`generate_llm_seeds`] for several topics with at most `parallelism`
/// requests in flight. Output is ordered by topic order, then line order.
pub fn generate_llm_seeds_for_topics(
    backend: &dyn CompletionBackend,
    template: &PromptTemplate,
    location: &str,
    language: &str,
    topics: &[String],
    count: usize,
    parallelism: usize,
) -> Result<Vec<SeedQuery>, SeedError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| SeedError::Io(io::Error::other(e)))?;
    let per_topic: Vec<Result<Vec<SeedQuery>, SeedError>> = pool.install(|| {
        topics
            .par_iter()
            .map(|t| generate_llm_seeds(backend, template, location, language, t, count))
            .collect()
    });
    let mut out = Vec::new();
    for r in per_topic {
        out.extend(r?);
    }
    Ok(out)
}

/// Canonical keys that a seed round must exclude, one per line.
#[derive(Debug, Clone, Default)]
pub struct Denylist(HashSet<CanonicalKey>);

impl Denylist {
    pub fn parse<R: BufRead>(reader: R) -> io::Result<Self> {
        let mut keys = HashSet::new();
        for line in reader.lines() {
            let line = line?;
            let key = canonicalize(&line);
            if !key.is_empty() {
                keys.insert(key);
            }
        }
        Ok(Self(keys))
    }

    pub fn contains(&self, key: &CanonicalKey) -> bool {
        self.0.contains(key)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn apply_denylist(seeds: Vec<SeedQuery>, denylist: &Denylist) -> Vec<SeedQuery> {
    seeds
        .into_iter()
        .filter(|s| !denylist.contains(&s.key()))
        .collect()
}

/// Keeps the first occurrence of each seed, dropping exact duplicates (equal
/// canonical key) and near duplicates (trigram Jaccard >= 0.85 against any
/// retained seed). Repeated ids among the survivors get a numeric suffix.
pub fn build_seed_set(
    raw: Vec<SeedQuery>,
    location: &str,
    language: &str,
) -> Result<SeedSet, SeedError> {
    let mut dedup = Deduplicator::default();
    let mut ids: HashSet<String> = HashSet::new();
    let mut queries = Vec::new();
    for mut seed in raw {
        let key = seed.key();
        if key.is_empty() || dedup.insert(key).is_err() {
            continue;
        }
        if !ids.insert(seed.id.clone()) {
            let base = seed.id.clone();
            let mut n = 2;
            while !ids.insert(format!("{base}-{n}")) {
                n += 1;
            }
            seed.id = format!("{base}-{n}");
        }
        queries.push(seed);
    }
    if queries.is_empty() {
        return Err(SeedError::AllFiltered);
    }
    Ok(SeedSet {
        queries,
        location: location.to_string(),
        language: language.to_string(),
    })
}

pub fn write_seed_csv<W: Write>(seeds: &[SeedQuery], writer: W) -> Result<(), SeedError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "topic", "query"])?;
    for s in seeds {
        w.write_record([&s.id, &s.topic, &s.text])?;
    }
    w.flush()?;
    Ok(())
}

/// Review sheet for LLM-generated seeds. The `accepted` column is left blank
/// for a human reviewer.
pub fn write_review_csv<W: Write>(seeds: &[SeedQuery], writer: W) -> Result<(), SeedError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "topic", "query", "origin", "location", "accepted"])?;
    for s in seeds {
        let origin = match s.origin {
            SeedOrigin::Manual => "manual",
            SeedOrigin::Template => "template",
            SeedOrigin::Llm => "llm",
        };
        w.write_record([&s.id, &s.topic, &s.text, origin, &s.location, ""])?;
    }
    w.flush()?;
    Ok(())
}
