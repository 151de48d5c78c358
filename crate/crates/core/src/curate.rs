//! Post-harvest validation: domain reliability labelling, LLM annotation of
//! question quality, answer edits and location relevance, and blinded
//! preference tasks for human review.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{self, BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;
use url::{Host, Url};

use crate::llm::{CompletionBackend, CompletionRequest, LlmError, PromptTemplate};
use crate::model::{AnnotationResult, Annotator, AnnotatorKind, QaRecord, QuestionLabel, Reliability};
use crate::text::canonicalize;

#[derive(Debug, Error)]
pub enum CurateError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Hosts and registrable domains that share one reliability label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainList {
    entries: HashSet<String>,
    pub label_on_match: Reliability,
    pub source: String,
}

/// Lowercase host of an entry line; accepts bare hosts or full URLs.
fn normalize_entry(line: &str) -> Option<String> {
    let line = line.trim();
    if line.is_empty() {
        return None;
    }
    let host = if line.contains("://") {
        Url::parse(line).ok()?.host_str()?.to_string()
    } else {
        line.split(['/', '?', '#']).next()?.split(':').next()?.to_string()
    };
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    (!host.is_empty()).then_some(host)
}

impl DomainList {
    pub fn new<I, S>(entries: I, label_on_match: Reliability, source: &str) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            entries: entries.into_iter().filter_map(|e| normalize_entry(e.as_ref())).collect(),
            label_on_match,
            source: source.to_string(),
        }
    }

    pub fn empty() -> Self {
        Self::new(Vec::<String>::new(), Reliability::VeryReliable, "empty")
    }

    /// One host or registrable domain per line; `#` starts a comment.
    pub fn parse<R: BufRead>(reader: R, label_on_match: Reliability, source: &str) -> io::Result<Self> {
        let mut lines = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let content = line.split('#').next().unwrap_or("");
            lines.push(content.to_string());
        }
        Ok(Self::new(lines, label_on_match, source))
    }

    pub fn load(path: &Path, label_on_match: Reliability) -> io::Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::parse(io::BufReader::new(file), label_on_match, &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Whether the URL's host, or its registrable domain, is listed.
    /// `None` when the URL has no domain host.
    pub fn matches_url(&self, url: &str) -> Option<bool> {
        let parsed = Url::parse(url).ok()?;
        let host = match parsed.host()? {
            Host::Domain(d) => d.trim_end_matches('.').to_ascii_lowercase(),
            Host::Ipv4(ip) => return Some(self.entries.contains(&ip.to_string())),
            Host::Ipv6(ip) => return Some(self.entries.contains(&ip.to_string())),
        };
        if self.entries.contains(&host) {
            return Some(true);
        }
        Some(registrable_domain(&host).is_some_and(|d| self.entries.contains(d)))
    }
}

/// Registrable domain (public suffix plus one label) of a host name.
pub fn registrable_domain(host: &str) -> Option<&str> {
    psl::domain_str(host)
}

/// Sets `reliability` from the allowlist: the match label when listed,
/// `not_sure` otherwise, `completely_unreliable` for unparseable URLs. A
/// match on the optional user-generated-content list downgrades an allowlist
/// hit to `partially_reliable`.
pub fn check_domain(mut record: QaRecord, list: &DomainList, ugc: Option<&DomainList>) -> QaRecord {
    record.reliability = match list.matches_url(&record.source_url) {
        None => Reliability::CompletelyUnreliable,
        Some(false) => Reliability::NotSure,
        Some(true) => {
            if ugc.and_then(|u| u.matches_url(&record.source_url)) == Some(true) {
                Reliability::PartiallyReliable
            } else {
                list.label_on_match
            }
        }
    };
    record
}

pub fn default_keep() -> HashSet<Reliability> {
    [Reliability::VeryReliable].into_iter().collect()
}

/// Stable filter on the reliability label.
pub fn filter_by_reliability(records: Vec<QaRecord>, keep: &HashSet<Reliability>) -> Vec<QaRecord> {
    if keep.is_empty() {
        warn!("reliability keep-set is empty; every record is filtered out");
    }
    records.into_iter().filter(|r| keep.contains(&r.reliability)).collect()
}

/// Prompt templates for the three annotation sub-tasks plus the combined
/// single-call variant.
#[derive(Debug, Clone)]
pub struct AnnotationPrompts {
    pub question_validation: PromptTemplate,
    pub answer_editing: PromptTemplate,
    pub location_relevance: PromptTemplate,
    pub structured: PromptTemplate,
}

pub const ANNOTATION_PLACEHOLDERS: [&str; 4] = ["question", "answer", "location", "source_url"];

impl AnnotationPrompts {
    pub fn builtin() -> Self {
        let get = |n| PromptTemplate::builtin(n).expect("bundled prompt");
        Self {
            question_validation: get("question_validation"),
            answer_editing: get("answer_editing"),
            location_relevance: get("location_relevance"),
            structured: get("structured_annotation"),
        }
    }

    /// Loads `<name>.txt` overrides from `dir`, falling back to the bundled
    /// template for files that do not exist.
    pub fn load_dir(dir: &Path) -> Result<Self, LlmError> {
        let mut prompts = Self::builtin();
        for (name, slot) in [
            ("question_validation", &mut prompts.question_validation),
            ("answer_editing", &mut prompts.answer_editing),
            ("location_relevance", &mut prompts.location_relevance),
            ("structured_annotation", &mut prompts.structured),
        ] {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                *slot = PromptTemplate::from_file(name, &path)?;
            }
        }
        prompts.validate()?;
        Ok(prompts)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        for t in [
            &self.question_validation,
            &self.answer_editing,
            &self.location_relevance,
            &self.structured,
        ] {
            t.require(&ANNOTATION_PLACEHOLDERS)?;
        }
        Ok(())
    }
}

/// Extracts the first JSON object from a completion, tolerating code fences
/// and surrounding prose.
pub fn extract_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str::<Value>(&text[start..=end]).ok()? {
        Value::Object(map) => Some(map),
        _ => None,
    }
}

const REASK_SUFFIX: &str =
    "\n\nYour previous reply could not be parsed. Reply with exactly one JSON object in the format above and nothing else.";

/// Sends the prompt, parses the reply with `parse`, and re-asks once if the
/// reply does not parse. `Ok(None)` means both replies were unusable.
fn ask<T>(
    backend: &dyn CompletionBackend,
    template: &PromptTemplate,
    vars: &BTreeMap<String, String>,
    parse: impl Fn(&serde_json::Map<String, Value>) -> Option<T>,
) -> Result<Option<T>, LlmError> {
    let mut request = CompletionRequest::render(template, vars.clone());
    for attempt in 0..2 {
        let reply = backend.complete(&request)?;
        if let Some(v) = extract_json_object(&reply).as_ref().and_then(&parse) {
            return Ok(Some(v));
        }
        if attempt == 0 {
            request.prompt.push_str(REASK_SUFFIX);
        }
    }
    Ok(None)
}

fn parse_label(map: &serde_json::Map<String, Value>) -> Option<QuestionLabel> {
    match map.get("question_label")?.as_str()?.trim().to_ascii_lowercase().as_str() {
        "good" => Some(QuestionLabel::Good),
        "bad" => Some(QuestionLabel::Bad),
        _ => None,
    }
}

fn parse_relevant(map: &serde_json::Map<String, Value>) -> Option<bool> {
    match map.get("location_relevant")? {
        Value::Bool(b) => Some(*b),
        Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "yes" => Some(true),
            "false" | "no" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn parse_edit(map: &serde_json::Map<String, Value>) -> Option<Option<String>> {
    match map.get("edited_answer") {
        None | Some(Value::Null) => Some(None),
        Some(Value::String(s)) if s.trim().is_empty() => Some(None),
        Some(Value::String(s)) => Some(Some(s.trim().to_string())),
        Some(_) => None,
    }
}

/// Annotates one record. Backend failures are returned as errors; replies
/// that still do not parse after one re-ask set `annotation_failed` instead.
/// Only annotation fields are touched.
pub fn annotate_llm(
    mut record: QaRecord,
    backend: &dyn CompletionBackend,
    prompts: &AnnotationPrompts,
    location: &str,
) -> Result<QaRecord, LlmError> {
    let vars: BTreeMap<String, String> = [
        ("question", record.question.as_str()),
        ("answer", record.answer.as_str()),
        ("location", location),
        ("source_url", record.source_url.as_str()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let annotator = Annotator {
        kind: AnnotatorKind::Llm,
        id: backend.id().to_string(),
    };

    let parsed = if backend.supports_structured() {
        ask(backend, &prompts.structured, &vars, |m| {
            Some((parse_label(m)?, parse_edit(m)?, parse_relevant(m)?))
        })?
    } else {
        match ask(backend, &prompts.question_validation, &vars, parse_label)? {
            None => None,
            Some(label) => {
                let edit = if label == QuestionLabel::Good {
                    ask(backend, &prompts.answer_editing, &vars, parse_edit)?
                } else {
                    Some(None)
                };
                match edit {
                    None => None,
                    Some(edit) => ask(backend, &prompts.location_relevance, &vars, parse_relevant)?
                        .map(|relevant| (label, edit, relevant)),
                }
            }
        }
    };

    match parsed {
        Some((label, edit, relevant)) => {
            record.annotation = Some(AnnotationResult {
                question_label: label,
                edited_answer: if label == QuestionLabel::Good { edit } else { None },
                location_relevant: relevant,
                annotator,
            });
            record.annotation_failed = false;
        }
        None => {
            warn!(question = %record.question, "annotation reply unparseable after re-ask");
            record.annotation = None;
            record.annotation_failed = true;
        }
    }
    Ok(record)
}

/// Annotates records with at most `parallelism` calls in flight. Output is
/// in input order. Records whose backend calls fail `attempts` times are
/// flagged `annotation_failed` and kept.
pub fn annotate_all(
    records: Vec<QaRecord>,
    backend: &dyn CompletionBackend,
    prompts: &AnnotationPrompts,
    location: &str,
    parallelism: usize,
    attempts: usize,
) -> Vec<QaRecord> {
    let run = |record: QaRecord| {
        let mut last_err = None;
        for _ in 0..attempts.max(1) {
            match annotate_llm(record.clone(), backend, prompts, location) {
                Ok(r) => return r,
                Err(e) if e.is_retriable() => last_err = Some(e),
                Err(e) => {
                    last_err = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = last_err {
            warn!(question = %record.question, error = %e, "annotation failed");
        }
        QaRecord {
            annotation: None,
            annotation_failed: true,
            ..record
        }
    };
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build() {
        Ok(pool) => pool.install(|| records.into_par_iter().map(run).collect()),
        Err(_) => records.into_iter().map(run).collect(),
    }
}

/// Drops records an annotator marked as not relevant to the location.
pub fn drop_location_irrelevant(records: Vec<QaRecord>) -> Vec<QaRecord> {
    records
        .into_iter()
        .filter(|r| r.annotation.as_ref().is_none_or(|a| a.location_relevant))
        .collect()
}

/// One blinded answer-preference task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTask {
    pub task_id: String,
    pub question: String,
    pub source_url: String,
    pub answer_1: String,
    pub answer_2: String,
    pub options: Vec<String>,
    pub same_answer: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    Original,
    LlmEdited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnblindingKey {
    pub task_id: String,
    pub record_id: String,
    pub answer_1_source: AnswerSource,
    pub answer_2_source: AnswerSource,
}

pub const PREFERENCE_OPTIONS: [&str; 3] = ["answer_1", "answer_2", "neither"];

/// LLM-edited answers keyed by record id, from records' annotations.
pub fn llm_alternatives(records: &[QaRecord]) -> HashMap<String, String> {
    records
        .iter()
        .filter_map(|r| {
            let edit = r.annotation.as_ref()?.edited_answer.as_ref()?;
            Some((r.record_id(), edit.clone()))
        })
        .collect()
}

/// Pairs each record's original answer with its LLM alternative in a
/// seeded random order. Records without an alternative are skipped.
pub fn export_preference_tasks(
    records: &[QaRecord],
    alternatives: &HashMap<String, String>,
    seed: u64,
) -> (Vec<PreferenceTask>, Vec<UnblindingKey>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::new();
    let mut keys = Vec::new();
    for record in records {
        let record_id = record.record_id();
        let Some(alt) = alternatives.get(&record_id) else {
            warn!(record_id, "no LLM alternative; skipping preference task");
            continue;
        };
        let swap: bool = rng.gen();
        let task_id = format!("task-{:05}", tasks.len() + 1);
        let (a1, a2, s1, s2) = if swap {
            (alt.clone(), record.answer.clone(), AnswerSource::LlmEdited, AnswerSource::Original)
        } else {
            (record.answer.clone(), alt.clone(), AnswerSource::Original, AnswerSource::LlmEdited)
        };
        tasks.push(PreferenceTask {
            task_id: task_id.clone(),
            question: record.question.clone(),
            source_url: record.source_url.clone(),
            same_answer: canonicalize(&record.answer) == canonicalize(alt),
            answer_1: a1,
            answer_2: a2,
            options: PREFERENCE_OPTIONS.iter().map(|s| s.to_string()).collect(),
        });
        keys.push(UnblindingKey {
            task_id,
            record_id,
            answer_1_source: s1,
            answer_2_source: s2,
        });
    }
    (tasks, keys)
}

pub fn write_preference_tasks<W: Write>(tasks: &[PreferenceTask], mut writer: W) -> Result<(), CurateError> {
    for t in tasks {
        serde_json::to_writer(&mut writer, t)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_unblinding_key<W: Write>(keys: &[UnblindingKey], writer: W) -> Result<(), CurateError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["task_id", "record_id", "answer_1_source", "answer_2_source"])?;
    let name = |s: AnswerSource| match s {
        AnswerSource::Original => "original",
        AnswerSource::LlmEdited => "llm_edited",
    };
    for k in keys {
        w.write_record([
            k.task_id.as_str(),
            k.record_id.as_str(),
            name(k.answer_1_source),
            name(k.answer_2_source),
        ])?;
    }
    w.flush()?;
    Ok(())
}
