//! Domain types shared by every pipeline stage.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use url::Url;

use crate::text::{canonicalize, CanonicalKey};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("source_url {0:?} is not an absolute URL")]
    BadUrl(String),
    #[error("iteration {iteration} exceeds n_iter {n_iter}")]
    Iteration { iteration: u32, n_iter: u32 },
    #[error("annotation labelled bad must not carry an edited answer")]
    BadWithEdit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedOrigin {
    Manual,
    Template,
    Llm,
}

/// A topic-tagged, location-bound query that starts harvesting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedQuery {
    pub id: String,
    pub text: String,
    pub topic: String,
    pub location: String,
    pub language: String,
    pub origin: SeedOrigin,
}

impl SeedQuery {
    pub fn key(&self) -> CanonicalKey {
        canonicalize(&self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reliability {
    VeryReliable,
    PartiallyReliable,
    NotSure,
    CompletelyUnreliable,
    Unchecked,
}

impl Reliability {
    pub const ALL: [Reliability; 5] = [
        Reliability::VeryReliable,
        Reliability::PartiallyReliable,
        Reliability::NotSure,
        Reliability::CompletelyUnreliable,
        Reliability::Unchecked,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Reliability::VeryReliable => "very_reliable",
            Reliability::PartiallyReliable => "partially_reliable",
            Reliability::NotSure => "not_sure",
            Reliability::CompletelyUnreliable => "completely_unreliable",
            Reliability::Unchecked => "unchecked",
        }
    }
}

impl fmt::Display for Reliability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Reliability {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Reliability::ALL
            .into_iter()
            .find(|r| r.as_str() == s.trim())
            .ok_or_else(|| format!("unknown reliability label {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionLabel {
    Good,
    Bad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotatorKind {
    Llm,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotator {
    pub kind: AnnotatorKind,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub question_label: QuestionLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_answer: Option<String>,
    pub location_relevant: bool,
    pub annotator: Annotator,
}

impl AnnotationResult {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.question_label == QuestionLabel::Bad && self.edited_answer.is_some() {
            return Err(ValidationError::BadWithEdit);
        }
        Ok(())
    }
}

/// One harvested question/answer pair with attribution and provenance.
///
/// Field declaration order is the serialized field order of the dataset files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub question: String,
    pub answer: String,
    pub source_url: String,
    pub engine: String,
    pub seed_id: String,
    pub query_text: String,
    pub iteration: u32,
    pub location: String,
    pub language: String,
    pub topic: String,
    pub collected_at: DateTime<Utc>,
    pub reliability: Reliability,
    pub annotation: Option<AnnotationResult>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub annotation_failed: bool,
}

impl QaRecord {
    pub fn question_key(&self) -> CanonicalKey {
        canonicalize(&self.question)
    }

    /// Stable identifier derived from the canonical question.
    pub fn record_id(&self) -> String {
        let digest = Sha256::digest(self.question_key().as_str().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.question.trim().is_empty() {
            return Err(ValidationError::Empty("question"));
        }
        if self.answer.trim().is_empty() {
            return Err(ValidationError::Empty("answer"));
        }
        match Url::parse(&self.source_url) {
            Ok(u) if u.has_host() => {}
            _ => return Err(ValidationError::BadUrl(self.source_url.clone())),
        }
        if let Some(a) = &self.annotation {
            a.validate()?;
        }
        Ok(())
    }

    pub fn validate_for_run(&self, n_iter: u32) -> Result<(), ValidationError> {
        self.validate()?;
        if self.iteration > n_iter {
            return Err(ValidationError::Iteration {
                iteration: self.iteration,
                n_iter,
            });
        }
        Ok(())
    }
}
