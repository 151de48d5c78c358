//! Agreement statistics over annotation judgments and dataset distribution
//! reports.
//!
//! Categorical agreement (observed agreement, Cohen's kappa, Gwet's AC1) is
//! two-rater. Ordinal agreement on Likert ratings uses the r*wg(j) index
//! without Spearman-Brown correction: `1 - mean(s²) / σ²_EU`, where `s²` is
//! the per-item sample variance and `σ²_EU = (A² - 1) / 12` the variance of
//! a uniform null on an `A`-point scale.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::hash::Hash;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Split;
use crate::model::QaRecord;

#[derive(Debug, Error)]
pub enum AgreementError {
    #[error("rater label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no rated items")]
    Empty,
    #[error("items missing a rating from one of the raters: {0:?}")]
    MissingRaters(Vec<String>),
    #[error("expected exactly two raters for categorical agreement, found {0}")]
    RaterCount(usize),
    #[error("scale must have at least 2 points, got {0}")]
    Scale(u8),
    #[error("metric {0} has no item with two or more ratings")]
    NoRatings(String),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preference {
    #[serde(rename = "answer_1")]
    Answer1,
    #[serde(rename = "llm_edited")]
    LlmEdited,
    #[serde(rename = "neither")]
    Neither,
}

impl Preference {
    pub const ALL: [Preference; 3] = [Preference::Answer1, Preference::LlmEdited, Preference::Neither];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LikertMetric {
    Clarity,
    Faithfulness,
    Informativeness,
    Plausibility,
}

impl LikertMetric {
    pub const ALL: [LikertMetric; 4] = [
        LikertMetric::Clarity,
        LikertMetric::Faithfulness,
        LikertMetric::Informativeness,
        LikertMetric::Plausibility,
    ];

    pub fn title(self) -> &'static str {
        match self {
            LikertMetric::Clarity => "Clarity",
            LikertMetric::Faithfulness => "Faithfulness",
            LikertMetric::Informativeness => "Informativeness",
            LikertMetric::Plausibility => "Plausibility",
        }
    }
}

impl fmt::Display for LikertMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.title().to_ascii_lowercase())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingKind {
    Preference,
    Likert,
}

/// One rater's judgment of one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub item_id: String,
    pub rater_id: String,
    pub kind: RatingKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference: Option<Preference>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likert: Option<BTreeMap<LikertMetric, u8>>,
    #[serde(default)]
    pub edited_by_annotator: bool,
}

impl RatingRecord {
    pub fn validate(&self) -> Result<(), String> {
        match (self.kind, &self.preference, &self.likert) {
            (RatingKind::Preference, Some(_), None) => Ok(()),
            (RatingKind::Likert, None, Some(scores)) => {
                if let Some((m, v)) = scores.iter().find(|(_, v)| !(1..=5).contains(*v)) {
                    return Err(format!("likert {m} score {v} outside 1..=5"));
                }
                Ok(())
            }
            (RatingKind::Preference, _, _) => Err("preference rating needs `preference` and no `likert`".into()),
            (RatingKind::Likert, _, _) => Err("likert rating needs `likert` and no `preference`".into()),
        }
    }
}

/// Whether an annotator changed an answer: any byte difference after
/// trimming surrounding whitespace.
pub fn is_edited(original: &str, final_answer: &str) -> bool {
    original.trim() != final_answer.trim()
}

/// Reads RatingRecords from JSONL, reporting the first schema violation by
/// line number. Blank lines are skipped.
pub fn read_ratings<R: BufRead>(reader: R) -> Result<Vec<RatingRecord>, AgreementError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RatingRecord = serde_json::from_str(&line).map_err(|e| AgreementError::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        record
            .validate()
            .map_err(|message| AgreementError::Schema { line: i + 1, message })?;
        out.push(record);
    }
    Ok(out)
}

/// An index value with a flag for degenerate inputs (undefined chance
/// correction, or a raw value clamped into range).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndexValue {
    pub value: f64,
    pub degenerate: bool,
}

fn check_pair<L>(first: &[L], second: &[L]) -> Result<usize, AgreementError> {
    if first.len() != second.len() {
        return Err(AgreementError::LengthMismatch(first.len(), second.len()));
    }
    if first.is_empty() {
        return Err(AgreementError::Empty);
    }
    Ok(first.len())
}

/// Fraction of items on which the two raters chose the same category.
pub fn observed_agreement<L: PartialEq>(first: &[L], second: &[L]) -> Result<f64, AgreementError> {
    let n = check_pair(first, second)?;
    let agree = first.iter().zip(second).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / n as f64)
}

fn proportions<L: Eq + Hash + Clone>(labels: &[L]) -> HashMap<L, f64> {
    let mut counts: HashMap<L, usize> = HashMap::new();
    for l in labels {
        *counts.entry(l.clone()).or_default() += 1;
    }
    let n = labels.len() as f64;
    counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect()
}

/// `(p_o - p_e) / (1 - p_e)` with `p_e = Σ_c p₁(c)·p₂(c)`. When both raters
/// use one and the same category throughout, `p_e = 1` and the value is
/// defined as 1 with the degenerate flag.
pub fn cohen_kappa<L: Eq + Hash + Clone>(first: &[L], second: &[L]) -> Result<IndexValue, AgreementError> {
    let p_o = observed_agreement(first, second)?;
    let (m1, m2) = (proportions(first), proportions(second));
    let p_e: f64 = m1.iter().map(|(c, p)| p * m2.get(c).copied().unwrap_or(0.0)).sum();
    if p_o == 1.0 {
        return Ok(IndexValue {
            value: 1.0,
            degenerate: p_e >= 1.0,
        });
    }
    if p_e >= 1.0 {
        return Ok(IndexValue {
            value: 1.0,
            degenerate: true,
        });
    }
    Ok(IndexValue {
        value: (p_o - p_e) / (1.0 - p_e),
        degenerate: false,
    })
}

/// `(p_o - p_e) / (1 - p_e)` with `p_e = Σ_c π_c(1 - π_c) / (C - 1)`, where
/// `π_c` averages the two raters' marginal proportions and `C` is the number
/// of categories on the scale (at least the number observed). `C = 1` is
/// degenerate and yields 1.
pub fn gwet_ac1<L: Eq + Hash + Clone>(
    first: &[L],
    second: &[L],
    n_categories: usize,
) -> Result<IndexValue, AgreementError> {
    let p_o = observed_agreement(first, second)?;
    let (m1, m2) = (proportions(first), proportions(second));
    let categories: HashSet<&L> = m1.keys().chain(m2.keys()).collect();
    let c = n_categories.max(categories.len());
    if c <= 1 {
        return Ok(IndexValue {
            value: 1.0,
            degenerate: true,
        });
    }
    let p_e: f64 = categories
        .iter()
        .map(|cat| {
            let pi = (m1.get(*cat).copied().unwrap_or(0.0) + m2.get(*cat).copied().unwrap_or(0.0)) / 2.0;
            pi * (1.0 - pi)
        })
        .sum::<f64>()
        / (c - 1) as f64;
    if p_o == 1.0 {
        return Ok(IndexValue {
            value: 1.0,
            degenerate: false,
        });
    }
    Ok(IndexValue {
        value: (p_o - p_e) / (1.0 - p_e),
        degenerate: false,
    })
}

/// Variance of a discrete uniform distribution over `A` scale points.
pub fn uniform_null_variance(scale_points: u8) -> f64 {
    let a = f64::from(scale_points);
    (a * a - 1.0) / 12.0
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RwgValue {
    /// Clamped into [0, 1].
    pub value: f64,
    pub raw: f64,
    pub clamped: bool,
    pub items: usize,
}

/// r*wg(j) over items, each a list of ratings for one metric. Items with
/// fewer than two ratings are ignored.
pub fn rwg_star(items: &[Vec<f64>], scale_points: u8) -> Result<RwgValue, AgreementError> {
    if scale_points < 2 {
        return Err(AgreementError::Scale(scale_points));
    }
    let variances: Vec<f64> = items.iter().filter(|r| r.len() >= 2).map(|r| sample_variance(r)).collect();
    if variances.is_empty() {
        return Err(AgreementError::Empty);
    }
    let mean_var = variances.iter().sum::<f64>() / variances.len() as f64;
    let raw = 1.0 - mean_var / uniform_null_variance(scale_points);
    let value = raw.clamp(0.0, 1.0);
    Ok(RwgValue {
        value,
        raw,
        clamped: value != raw,
        items: variances.len(),
    })
}

/// Two-rater agreement summary. Categorical indices are present for
/// preference ratings; `rwg_star` for Likert ratings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub kind: RatingKind,
    pub observed_agreement: Option<f64>,
    pub cohen_kappa: Option<IndexValue>,
    pub gwet_ac1: Option<IndexValue>,
    pub rwg_star: BTreeMap<LikertMetric, RwgValue>,
    pub mean_scores: BTreeMap<LikertMetric, f64>,
    pub n_items: usize,
    pub n_raters: usize,
    pub n_categories: usize,
    /// Share of ratings where the annotator edited the answer.
    pub edited_fraction: f64,
}

fn raters_in_order(records: &[RatingRecord]) -> Vec<String> {
    let mut seen = HashSet::new();
    records
        .iter()
        .filter(|r| seen.insert(r.rater_id.clone()))
        .map(|r| r.rater_id.clone())
        .collect()
}

fn edited_fraction(records: &[RatingRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.edited_by_annotator).count() as f64 / records.len() as f64
}

/// Item ids with the first and second rater's labels, index-aligned.
pub type PairedPreferences = (Vec<String>, Vec<Preference>, Vec<Preference>);

/// Aligns two raters' preference labels by item (items in first-seen order).
pub fn paired_preferences(records: &[RatingRecord]) -> Result<PairedPreferences, AgreementError> {
    let prefs: Vec<&RatingRecord> = records.iter().filter(|r| r.kind == RatingKind::Preference).collect();
    if prefs.is_empty() {
        return Err(AgreementError::Empty);
    }
    let raters = raters_in_order(&prefs.iter().map(|r| (*r).clone()).collect::<Vec<_>>());
    if raters.len() != 2 {
        return Err(AgreementError::RaterCount(raters.len()));
    }
    let mut items: Vec<String> = Vec::new();
    let mut by_item: HashMap<&str, [Option<Preference>; 2]> = HashMap::new();
    for r in &prefs {
        let slot = usize::from(r.rater_id != raters[0]);
        let entry = by_item.entry(r.item_id.as_str()).or_insert_with(|| {
            items.push(r.item_id.clone());
            [None, None]
        });
        entry[slot] = r.preference;
    }
    let missing: Vec<String> = items
        .iter()
        .filter(|i| by_item[i.as_str()].iter().any(Option::is_none))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(AgreementError::MissingRaters(missing));
    }
    let first = items.iter().map(|i| by_item[i.as_str()][0].unwrap()).collect();
    let second = items.iter().map(|i| by_item[i.as_str()][1].unwrap()).collect();
    Ok((items, first, second))
}

pub fn preference_report(records: &[RatingRecord]) -> Result<AgreementReport, AgreementError> {
    let (items, first, second) = paired_preferences(records)?;
    Ok(AgreementReport {
        kind: RatingKind::Preference,
        observed_agreement: Some(observed_agreement(&first, &second)?),
        cohen_kappa: Some(cohen_kappa(&first, &second)?),
        gwet_ac1: Some(gwet_ac1(&first, &second, Preference::ALL.len())?),
        rwg_star: BTreeMap::new(),
        mean_scores: BTreeMap::new(),
        n_items: items.len(),
        n_raters: 2,
        n_categories: Preference::ALL.len(),
        edited_fraction: edited_fraction(records),
    })
}

/// Mean score and r*wg(j) per metric over Likert ratings from any number of
/// raters.
pub fn likert_report(records: &[RatingRecord], scale_points: u8) -> Result<AgreementReport, AgreementError> {
    let likert: Vec<&RatingRecord> = records.iter().filter(|r| r.kind == RatingKind::Likert).collect();
    if likert.is_empty() {
        return Err(AgreementError::Empty);
    }
    let mut items: Vec<&str> = Vec::new();
    let mut per_item: HashMap<&str, BTreeMap<LikertMetric, Vec<f64>>> = HashMap::new();
    for r in &likert {
        let entry = per_item.entry(r.item_id.as_str()).or_insert_with(|| {
            items.push(r.item_id.as_str());
            BTreeMap::new()
        });
        for (m, v) in r.likert.iter().flatten() {
            entry.entry(*m).or_default().push(f64::from(*v));
        }
    }
    let mut rwg = BTreeMap::new();
    let mut means = BTreeMap::new();
    for metric in LikertMetric::ALL {
        let ratings: Vec<Vec<f64>> = items
            .iter()
            .filter_map(|i| per_item[i].get(&metric).cloned())
            .collect();
        let all: Vec<f64> = ratings.iter().flatten().copied().collect();
        if all.is_empty() {
            return Err(AgreementError::NoRatings(metric.to_string()));
        }
        means.insert(metric, all.iter().sum::<f64>() / all.len() as f64);
        let value = rwg_star(&ratings, scale_points).map_err(|e| match e {
            AgreementError::Empty => AgreementError::NoRatings(metric.to_string()),
            other => other,
        })?;
        rwg.insert(metric, value);
    }
    let raters: BTreeSet<&str> = likert.iter().map(|r| r.rater_id.as_str()).collect();
    Ok(AgreementReport {
        kind: RatingKind::Likert,
        observed_agreement: None,
        cohen_kappa: None,
        gwet_ac1: None,
        rwg_star: rwg,
        mean_scores: means,
        n_items: items.len(),
        n_raters: raters.len(),
        n_categories: usize::from(scale_points),
        edited_fraction: edited_fraction(records),
    })
}

/// Text table: one block of average Likert scores and one block of
/// r*wg(j) values, one row per labelled report, one column per metric.
pub fn render_likert_table(rows: &[(String, AgreementReport)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max("Location".len());
    let col_w = LikertMetric::ALL.iter().map(|m| m.title().len()).max().unwrap_or(0);
    let width = label_w + (col_w + 2) * LikertMetric::ALL.len();
    let mut out = String::new();
    let rule = "-".repeat(width);
    let _ = write!(out, "{:<label_w$}", "Location");
    for m in LikertMetric::ALL {
        let _ = write!(out, "  {:>col_w$}", m.title());
    }
    out.push('\n');
    let block = |out: &mut String, title: &str, pick: &dyn Fn(&AgreementReport, LikertMetric) -> f64| {
        let _ = writeln!(out, "{rule}");
        let pad = width.saturating_sub(title.chars().count()) / 2;
        let _ = writeln!(out, "{}{title}", " ".repeat(pad));
        let _ = writeln!(out, "{rule}");
        for (label, report) in rows {
            let _ = write!(out, "{label:<label_w$}");
            for m in LikertMetric::ALL {
                let _ = write!(out, "  {:>col_w$.2}", pick(report, m));
            }
            out.push('\n');
        }
    };
    block(&mut out, "Average Likert score", &|r, m| r.mean_scores.get(&m).copied().unwrap_or(f64::NAN));
    block(&mut out, "Agreement index r*wg(j)", &|r, m| {
        r.rwg_star.get(&m).map_or(f64::NAN, |v| v.value)
    });
    let _ = writeln!(out, "{rule}");
    out
}

/// CSV with columns `section,location,<metrics...>`; values unrounded.
pub fn write_likert_csv<W: Write>(rows: &[(String, AgreementReport)], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["section".to_string(), "location".to_string()];
    header.extend(LikertMetric::ALL.iter().map(|m| m.to_string()));
    w.write_record(&header)?;
    for (section, pick) in [
        ("average_likert", Box::new(|r: &AgreementReport, m| r.mean_scores[&m]) as Box<dyn Fn(&AgreementReport, LikertMetric) -> f64>),
        ("rwg_star", Box::new(|r: &AgreementReport, m| r.rwg_star[&m].value)),
    ] {
        for (label, report) in rows {
            let mut row = vec![section.to_string(), label.clone()];
            row.extend(LikertMetric::ALL.iter().map(|m| pick(report, *m).to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn render_preference_report(label: &str, r: &AgreementReport) -> String {
    let fmt = |v: Option<IndexValue>| match v {
        Some(v) if v.degenerate => format!("{:.3} (degenerate)", v.value),
        Some(v) => format!("{:.3}", v.value),
        None => "--".into(),
    };
    format!(
        "{label}\n  items: {}\n  raters: {}\n  categories: {}\n  observed agreement: {}\n  Cohen's kappa: {}\n  Gwet's AC1: {}\n  edited by annotator: {:.1}%\n",
        r.n_items,
        r.n_raters,
        r.n_categories,
        r.observed_agreement.map_or("--".into(), |v| format!("{v:.3}")),
        fmt(r.cohen_kappa),
        fmt(r.gwet_ac1),
        r.edited_fraction * 100.0
    )
}

/// Record counts for one language and location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DistributionRow {
    pub language: String,
    pub location: String,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl DistributionRow {
    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }

    fn add(&mut self, split: Split) {
        match split {
            Split::Train => self.train += 1,
            Split::Dev => self.dev += 1,
            Split::Test => self.test += 1,
        }
    }
}

/// Per-(language, location) split counts. Totals are derived from the split
/// counts, never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DistributionReport {
    pub rows: Vec<DistributionRow>,
}

impl DistributionReport {
    pub fn from_records<'a, I>(records: I) -> Self
    where
        I: IntoIterator<Item = (Split, &'a QaRecord)>,
    {
        let mut rows: BTreeMap<(String, String), DistributionRow> = BTreeMap::new();
        for (split, r) in records {
            rows.entry((r.language.clone(), r.location.clone()))
                .or_insert_with(|| DistributionRow {
                    language: r.language.clone(),
                    location: r.location.clone(),
                    train: 0,
                    dev: 0,
                    test: 0,
                })
                .add(split);
        }
        Self {
            rows: rows.into_values().collect(),
        }
    }

    pub fn totals(&self) -> DistributionRow {
        let mut t = DistributionRow {
            language: "Total".into(),
            location: String::new(),
            train: 0,
            dev: 0,
            test: 0,
        };
        for r in &self.rows {
            t.train += r.train;
            t.dev += r.dev;
            t.test += r.test;
        }
        t
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["language", "location", "train", "dev", "test", "total"])?;
        for r in self.rows.iter().chain(std::iter::once(&self.totals())) {
            w.write_record([
                r.language.clone(),
                r.location.clone(),
                r.train.to_string(),
                r.dev.to_string(),
                r.test.to_string(),
                r.total().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned table; empty splits print as `--`.
    pub fn render_table(&self) -> String {
        let cell = |n: usize| if n == 0 { "--".to_string() } else { thousands(n) };
        let mut lines: Vec<[String; 6]> = vec![[
            "Language".into(),
            "Location".into(),
            "Train".into(),
            "Dev".into(),
            "Test".into(),
            "Total".into(),
        ]];
        for r in &self.rows {
            lines.push([
                r.language.clone(),
                r.location.clone(),
                cell(r.train),
                cell(r.dev),
                cell(r.test),
                thousands(r.total()),
            ]);
        }
        let t = self.totals();
        lines.push([
            t.language.clone(),
            String::new(),
            thousands(t.train),
            thousands(t.dev),
            thousands(t.test),
            thousands(t.total()),
        ]);
        let mut widths = [0usize; 6];
        for l in &lines {
            for (w, c) in widths.iter_mut().zip(l) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let total_width = widths.iter().sum::<usize>() + 2 * 5;
        for (i, l) in lines.iter().enumerate() {
            if i == 1 || i == lines.len() - 1 {
                let _ = writeln!(out, "{}", "-".repeat(total_width));
            }
            let _ = writeln!(
                out,
                "{:<w0$}  {:<w1$}  {:>w2$}  {:>w3$}  {:>w4$}  {:>w5$}",
                l[0],
                l[1],
                l[2],
                l[3],
                l[4],
                l[5],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3],
                w4 = widths[4],
                w5 = widths[5]
            );
        }
        out
    }
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}
