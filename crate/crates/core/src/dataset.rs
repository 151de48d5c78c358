//! JSONL import/export, deterministic train/dev/test splits and the on-disk
//! output layout `<out>/<language>/<location_slug>/{train,dev,test}.jsonl`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::QaRecord;

/// Regions below this many records are not split; every record goes to test.
pub const MIN_SPLIT_SIZE: usize = 1000;

/// Import fails outright when more than this share of lines is rejected.
pub const MAX_REJECT_RATIO: f64 = 0.10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    Ratios([f64; 3]),
    #[error("{rejected} of {total} lines rejected (first at line {first_line}: {first_message})")]
    TooManyRejects {
        rejected: usize,
        total: usize,
        first_line: usize,
        first_message: String,
    },
    #[error("env file {path}: {message}")]
    Env { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            dev: 0.1,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, dev: f64, test: f64) -> Result<Self, DatasetError> {
        let r = Self { train, dev, test };
        let parts = [train, dev, test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DatasetError::Ratios(parts));
        }
        Ok(r)
    }

    fn pick(&self, u: f64) -> Split {
        if u < self.train {
            Split::Train
        } else if u < self.train + self.dev {
            Split::Dev
        } else {
            Split::Test
        }
    }
}

/// Uniform value in [0, 1) from the canonical question key and the seed.
/// Records sharing a question land in the same split.
pub fn split_point(record: &QaRecord, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(record.question_key().as_str().as_bytes());
    h.update([0u8]);
    h.update(seed.to_be_bytes());
    let digest = h.finalize();
    let mut top = [0u8; 8];
    top.copy_from_slice(&digest[..8]);
    // 53 high bits give an exactly representable f64 in [0, 1).
    (u64::from_be_bytes(top) >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub min_size_threshold: usize,
    /// Whether the region fell below the threshold and went entirely to test.
    pub test_only: bool,
    pub counts: BTreeMap<Split, usize>,
    /// Split per record id. Records sharing a question share an id and a
    /// split.
    #[serde(skip)]
    pub assignments: BTreeMap<String, Split>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<QaRecord>,
    pub dev: Vec<QaRecord>,
    pub test: Vec<QaRecord>,
}

impl SplitDataset {
    pub fn get(&self, split: Split) -> &[QaRecord] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<QaRecord> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Test => &mut self.test,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Split, &QaRecord)> {
        Split::ALL
            .into_iter()
            .flat_map(move |s| self.get(s).iter().map(move |r| (s, r)))
    }
}

/// Deterministic split of one region's records. Input order is preserved
/// within each split.
pub fn split_dataset(
    records: Vec<QaRecord>,
    ratios: SplitRatios,
    seed: u64,
    min_size_threshold: usize,
) -> (SplitDataset, SplitAssignment) {
    let test_only = records.len() < min_size_threshold;
    let mut out = SplitDataset::default();
    let mut assignments = BTreeMap::new();
    for r in records {
        let split = if test_only {
            Split::Test
        } else {
            ratios.pick(split_point(&r, seed))
        };
        assignments.insert(r.record_id(), split);
        out.get_mut(split).push(r);
    }
    let counts = Split::ALL.iter().map(|s| (*s, out.get(*s).len())).collect();
    let assignment = SplitAssignment {
        seed,
        ratios,
        min_size_threshold,
        test_only,
        counts,
        assignments,
    };
    (out, assignment)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileManifest {
    pub path: String,
    pub count: usize,
    pub sha256: String,
}

/// Writes records one JSON object per line and returns the file's count and
/// digest.
pub fn export_jsonl(records: &[QaRecord], path: &Path) -> Result<FileManifest, DatasetError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&buf).and_then(|_| w.flush()).map_err(io_err(path))?;
    Ok(FileManifest {
        path: path.to_string_lossy().into_owned(),
        count: records.len(),
        sha256: hex::encode(Sha256::digest(&buf)),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Imported {
    pub records: Vec<QaRecord>,
    pub rejected: Vec<Rejected>,
}

/// Reads QaRecords from JSONL. Unparseable or invalid lines are collected
/// as rejects; more than [`MAX_REJECT_RATIO`] of them is an error.
pub fn import_jsonl<R: BufRead>(reader: R) -> Result<Imported, DatasetError> {
    let mut out = Imported::default();
    let mut total = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(Path::new("<input>")))?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let parsed = serde_json::from_str::<QaRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| r.validate().map(|_| r).map_err(|e| e.to_string()));
        match parsed {
            Ok(r) => out.records.push(r),
            Err(message) => out.rejected.push(Rejected { line: i + 1, message }),
        }
    }
    if total > 0 && out.rejected.len() as f64 / total as f64 > MAX_REJECT_RATIO {
        let first = &out.rejected[0];
        return Err(DatasetError::TooManyRejects {
            rejected: out.rejected.len(),
            total,
            first_line: first.line,
            first_message: first.message.clone(),
        });
    }
    Ok(out)
}

pub fn import_jsonl_file(path: &Path) -> Result<Imported, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    import_jsonl(BufReader::new(file))
}

/// Lowercased alphanumeric runs joined by `-`: "Doha, Qatar" -> "doha-qatar".
pub fn location_slug(location: &str) -> String {
    let mut out = String::new();
    for c in location.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            out.push(c);
        } else if !out.is_empty() && !out.ends_with('-') {
            out.push('-');
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    if out.is_empty() {
        "unknown".into()
    } else {
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionManifest {
    pub language: String,
    pub location: String,
    pub directory: String,
    pub assignment: SplitAssignment,
    pub files: BTreeMap<Split, FileManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub total: usize,
    pub regions: Vec<RegionManifest>,
}

/// Groups records by (language, location), splits each group and writes the
/// three files plus `manifest.json` under `out_dir`. File paths in the
/// manifest are relative to `out_dir`.
pub fn write_splits(
    records: Vec<QaRecord>,
    out_dir: &Path,
    ratios: SplitRatios,
    seed: u64,
    min_size_threshold: usize,
) -> Result<(Manifest, Vec<SplitDataset>), DatasetError> {
    let mut groups: BTreeMap<(String, String), Vec<QaRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.language.clone(), r.location.clone())).or_default().push(r);
    }
    let mut manifest = Manifest {
        total: 0,
        regions: Vec::new(),
    };
    let mut datasets = Vec::new();
    for ((language, location), group) in groups {
        let dir_rel = PathBuf::from(&language).join(location_slug(&location));
        let (data, assignment) = split_dataset(group, ratios, seed, min_size_threshold);
        let mut files = BTreeMap::new();
        for split in Split::ALL {
            let rel = dir_rel.join(format!("{split}.jsonl"));
            let mut fm = export_jsonl(data.get(split), &out_dir.join(&rel))?;
            fm.path = rel.to_string_lossy().into_owned();
            manifest.total += fm.count;
            files.insert(split, fm);
        }
        manifest.regions.push(RegionManifest {
            language,
            location,
            directory: dir_rel.to_string_lossy().into_owned(),
            assignment,
            files,
        });
        datasets.push(data);
    }
    let path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok((manifest, datasets))
}

/// Reads a split layout back from its manifest.
pub fn read_splits(out_dir: &Path) -> Result<(Manifest, Vec<(Split, QaRecord)>), DatasetError> {
    let path = out_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut out = Vec::new();
    for region in &manifest.regions {
        for (split, fm) in &region.files {
            let imported = import_jsonl_file(&out_dir.join(&fm.path))?;
            out.extend(imported.records.into_iter().map(|r| (*split, r)));
        }
    }
    Ok((manifest, out))
}

/// Parses a dotenv-style file into a map without touching the process
/// environment.
pub fn load_env_file(path: &Path) -> Result<BTreeMap<String, String>, DatasetError> {
    let iter = dotenvy::from_path_iter(path).map_err(|e| DatasetError::Env {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    iter.map(|item| {
        item.map_err(|e| DatasetError::Env {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    })
    .collect()
}
