//! Text canonicalization and near-duplicate detection.
//!
//! Exact duplicates are detected on [`CanonicalKey`]s; near duplicates on the
//! Jaccard index of character trigram sets computed over those keys. Both are
//! script-agnostic, so Arabic, Bangla or Assamese text goes through the same
//! path as English.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

/// Similarity at or above which two texts count as near duplicates.
pub const DUPLICATE_THRESHOLD: f64 = 0.85;

/// Normalized form of a text used for exact-duplicate detection and keying.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalKey(String);

impl CanonicalKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for CanonicalKey {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

fn canonical_pass(text: &str) -> String {
    let folded = caseless::default_case_fold_str(&text.nfkc().collect::<String>());
    let stripped: String = folded.nfkc().filter(|c| !is_punctuation(*c)).collect();
    let mut out = String::with_capacity(stripped.len());
    for word in stripped.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out.nfkc().collect()
}

/// NFKC-normalizes, case-folds, strips Unicode punctuation (all `P*`
/// categories) and collapses whitespace.
///
/// The pass is repeated until it reaches a fixed point: removing a punctuation
/// mark can bring a base letter next to a combining mark that NFKC then
/// composes, so a single pass is not always idempotent.
pub fn canonicalize(text: &str) -> CanonicalKey {
    let mut current = canonical_pass(text);
    for _ in 0..8 {
        let next = canonical_pass(&current);
        if next == current {
            break;
        }
        current = next;
    }
    CanonicalKey(current)
}

const START: u32 = 0x11_0000;
const END: u32 = 0x11_0001;

/// Set of character trigrams of a canonical key.
///
/// Keys shorter than three characters are padded with one start and one end
/// sentinel (outside the Unicode range) so every non-empty key has at least
/// one trigram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrigramSet {
    grams: HashSet<[u32; 3]>,
}

impl TrigramSet {
    pub fn from_key(key: &CanonicalKey) -> Self {
        let mut chars: Vec<u32> = key.as_str().chars().map(u32::from).collect();
        if !chars.is_empty() && chars.len() < 3 {
            chars.insert(0, START);
            chars.push(END);
        }
        let grams = chars.windows(3).map(|w| [w[0], w[1], w[2]]).collect();
        Self { grams }
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32; 3]> {
        self.grams.iter()
    }

    pub fn jaccard(&self, other: &TrigramSet) -> f64 {
        if self.grams.is_empty() && other.grams.is_empty() {
            return 1.0;
        }
        if self.grams.is_empty() || other.grams.is_empty() {
            return 0.0;
        }
        let shared = self.grams.intersection(&other.grams).count();
        let union = self.grams.len() + other.grams.len() - shared;
        shared as f64 / union as f64
    }
}

/// Jaccard index of the character trigram sets of two texts' canonical keys.
///
/// Returns 1.0 when the canonical keys are equal (including both empty) and
/// 0.0 when exactly one of them is empty.
pub fn trigram_jaccard(a: &str, b: &str) -> f64 {
    let (ka, kb) = (canonicalize(a), canonicalize(b));
    if ka == kb {
        return 1.0;
    }
    TrigramSet::from_key(&ka).jaccard(&TrigramSet::from_key(&kb))
}

/// Why a candidate was rejected by a [`Deduplicator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Duplicate {
    /// Canonical key equal to the retained entry at this index.
    Exact(usize),
    /// Trigram Jaccard at or above the threshold against this retained entry.
    Near(usize),
}

/// Greedy first-occurrence-wins filter: a candidate is retained unless it is
/// canonical-equal or near-duplicate to an already retained entry.
///
/// Near-duplicate lookups go through an inverted trigram index, so the cost
/// is proportional to the number of retained entries sharing a trigram rather
/// than all of them.
#[derive(Debug, Clone)]
pub struct Deduplicator {
    threshold: f64,
    exact: HashMap<CanonicalKey, usize>,
    sizes: Vec<usize>,
    index: HashMap<[u32; 3], Vec<usize>>,
}

impl Default for Deduplicator {
    fn default() -> Self {
        Self::new(DUPLICATE_THRESHOLD)
    }
}

impl Deduplicator {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            exact: HashMap::new(),
            sizes: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn contains_key(&self, key: &CanonicalKey) -> bool {
        self.exact.contains_key(key)
    }

    /// Looks for a retained entry that `key` duplicates, without inserting.
    pub fn find(&self, key: &CanonicalKey) -> Option<Duplicate> {
        if let Some(&idx) = self.exact.get(key) {
            return Some(Duplicate::Exact(idx));
        }
        let grams = TrigramSet::from_key(key);
        if grams.is_empty() {
            return None;
        }
        let mut shared: HashMap<usize, usize> = HashMap::new();
        for g in grams.iter() {
            if let Some(ids) = self.index.get(g) {
                for &id in ids {
                    *shared.entry(id).or_default() += 1;
                }
            }
        }
        let n = grams.len();
        let mut best: Option<usize> = None;
        for (id, common) in shared {
            let union = n + self.sizes[id] - common;
            if common as f64 / union as f64 >= self.threshold {
                best = Some(best.map_or(id, |b| b.min(id)));
            }
        }
        best.map(Duplicate::Near)
    }

    /// Retains `key` unless it duplicates an earlier entry. Returns the new
    /// entry's index on success.
    pub fn insert(&mut self, key: CanonicalKey) -> Result<usize, Duplicate> {
        if let Some(dup) = self.find(&key) {
            return Err(dup);
        }
        let id = self.sizes.len();
        let grams = TrigramSet::from_key(&key);
        for g in grams.iter() {
            self.index.entry(*g).or_default().push(id);
        }
        self.sizes.push(grams.len());
        self.exact.insert(key, id);
        Ok(id)
    }
}
