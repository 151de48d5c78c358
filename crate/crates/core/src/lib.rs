//! Building location- and language-specific question-answer datasets from a
//! search engine's related-question surface.
//!
//! The pipeline: seed queries ([`seedgen`]) are expanded through a search
//! backend ([`engines`], cached by [`cache`]) over several rounds of related
//! queries ([`harvest`]); the harvested pairs are reliability-labelled and
//! optionally LLM-annotated ([`curate`]), then split and exported as JSONL
//! ([`dataset`]). [`analytics`] holds the agreement statistics used to judge
//! annotation quality and the dataset distribution report.

pub mod analytics;
pub mod cache;
pub mod curate;
pub mod dataset;
pub mod engines;
pub mod harvest;
pub mod llm;
pub mod model;
pub mod seedgen;
pub mod text;

pub use model::{AnnotationResult, Annotator, AnnotatorKind, QaRecord, QuestionLabel, Reliability, SeedOrigin, SeedQuery};
pub use text::{canonicalize, trigram_jaccard, CanonicalKey, DUPLICATE_THRESHOLD};
