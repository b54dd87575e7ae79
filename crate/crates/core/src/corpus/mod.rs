//! Labeled description records: ingestion, cleaning, splitting and counting.

mod synth;
mod text;

pub use synth::{generate_synthetic, HierarchySpec, SynthConfig};
pub use text::{clean_text, tokenize, TextCleaner, TokenizedText};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{BreakdownLevel, ClassCode, Hierarchy};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed CSV: {0}")]
    MalformedCsv(String),
    #[error("missing required column {0:?}")]
    MissingColumn(&'static str),
    #[error("need at least 2 records to split, got {0}")]
    TooFewRecords(usize),
    #[error("validation fraction must be in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("duplicate record key {0}")]
    DuplicateRecord(String),
    #[error("split tags ({tags}) do not match record count ({records})")]
    SplitLength { tags: usize, records: usize },
    #[error("invalid synthetic corpus config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Hierarchy(#[from] crate::hierarchy::HierarchyError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Per-level labels of a record; `None` when the export left the cell empty.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labels {
    pub bl0: Option<ClassCode>,
    pub bl1: Option<ClassCode>,
    pub bl2: Option<ClassCode>,
}

impl Labels {
    pub fn get(&self, level: BreakdownLevel) -> Option<ClassCode> {
        match level {
            BreakdownLevel::Bl0 => self.bl0,
            BreakdownLevel::Bl1 => self.bl1,
            BreakdownLevel::Bl2 => self.bl2,
        }
    }

    pub fn set(&mut self, level: BreakdownLevel, code: Option<ClassCode>) {
        match level {
            BreakdownLevel::Bl0 => self.bl0 = code,
            BreakdownLevel::Bl1 => self.bl1 = code,
            BreakdownLevel::Bl2 => self.bl2 = code,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub record_id: String,
    pub plant_id: String,
    pub description: String,
    pub labels: Labels,
}

impl Record {
    pub fn new(
        record_id: impl Into<String>,
        plant_id: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        Record {
            record_id: record_id.into(),
            plant_id: plant_id.into(),
            description: description.into(),
            labels: Labels::default(),
        }
    }

    pub fn with_label(mut self, level: BreakdownLevel, code: ClassCode) -> Self {
        self.labels.set(level, Some(code));
        self
    }

    /// `plant_id/record_id`, the key used by prediction files and the service.
    pub fn key(&self) -> String {
        format!("{}/{}", self.plant_id, self.record_id)
    }

    pub fn label(&self, level: BreakdownLevel) -> Option<ClassCode> {
        self.labels.get(level)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Split::Train => "train",
            Split::Validation => "validation",
        })
    }
}

/// Records plus one split tag per record. Record keys are unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<Record>,
    split: Vec<Split>,
}

impl Dataset {
    /// Wraps records, tagging everything as training data until split.
    pub fn new(records: Vec<Record>) -> Result<Self, CorpusError> {
        let split = vec![Split::Train; records.len()];
        Self::with_split(records, split)
    }

    pub fn with_split(records: Vec<Record>, split: Vec<Split>) -> Result<Self, CorpusError> {
        if split.len() != records.len() {
            return Err(CorpusError::SplitLength {
                tags: split.len(),
                records: records.len(),
            });
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert((r.plant_id.as_str(), r.record_id.as_str())) {
                return Err(CorpusError::DuplicateRecord(r.key()));
            }
        }
        Ok(Dataset { records, split })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn splits(&self) -> &[Split] {
        &self.split
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split_of(&self, idx: usize) -> Split {
        self.split[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Record, Split)> + '_ {
        self.records.iter().zip(self.split.iter().copied())
    }

    pub fn indices(&self, split: Split) -> impl Iterator<Item = usize> + '_ {
        self.split
            .iter()
            .enumerate()
            .filter(move |(_, s)| **s == split)
            .map(|(i, _)| i)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split.iter().filter(|s| **s == split).count()
    }

    pub fn find(&self, key: &str) -> Option<usize> {
        self.records.iter().position(|r| r.key() == key)
    }

    /// Replaces the label of record `idx` at `level`.
    pub fn set_label(&mut self, idx: usize, level: BreakdownLevel, code: Option<ClassCode>) {
        self.records[idx].labels.set(level, code);
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string(self)
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let ds: Dataset =
            serde_json::from_str(text).map_err(|e| CorpusError::MalformedCsv(e.to_string()))?;
        Self::with_split(ds.records, ds.split)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("dataset serializes");
        std::fs::write(path, text).map_err(|e| CorpusError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Writes the records in the ingestion CSV layout (splits are not kept).
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), CorpusError> {
        let mut w = csv::Writer::from_writer(writer);
        let malformed = |e: csv::Error| CorpusError::MalformedCsv(e.to_string());
        w.write_record(CSV_HEADER).map_err(malformed)?;
        for r in &self.records {
            let code = |l: BreakdownLevel| r.label(l).map(|c| c.to_string()).unwrap_or_default();
            w.write_record([
                r.record_id.as_str(),
                r.plant_id.as_str(),
                r.description.as_str(),
                &code(BreakdownLevel::Bl0),
                &code(BreakdownLevel::Bl1),
                &code(BreakdownLevel::Bl2),
            ])
            .map_err(malformed)?;
        }
        w.flush().map_err(|e| CorpusError::MalformedCsv(e.to_string()))?;
        Ok(())
    }
}

pub const CSV_HEADER: [&str; 6] = ["record_id", "plant_id", "description", "bl0", "bl1", "bl2"];

/// A row left out of an ingested dataset, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub row: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub rejects: Vec<Reject>,
}

impl Ingested {
    /// Rejects report as CSV `row,reason`.
    pub fn rejects_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "reason"]).expect("in-memory write");
        for r in &self.rejects {
            w.write_record([r.row.to_string(), r.reason.clone()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }
}

pub fn ingest_csv(
    path: impl AsRef<Path>,
    hierarchies: &BTreeMap<BreakdownLevel, Hierarchy>,
) -> Result<Ingested, CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    ingest_reader(file, hierarchies)
}

/// Parses the `record_id,plant_id,description,bl0,bl1,bl2` layout.
///
/// Label columns are optional. Rows with bad codes, codes unknown to the
/// supplied hierarchies, a missing id or a duplicate key are reported as
/// rejects; the row numbers are 1-based file lines.
pub fn ingest_reader<R: Read>(
    reader: R,
    hierarchies: &BTreeMap<BreakdownLevel, Hierarchy>,
) -> Result<Ingested, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::Headers)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::MalformedCsv(e.to_string()))?
        .clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
    };
    let id_col = col("record_id").ok_or(CorpusError::MissingColumn("record_id"))?;
    let plant_col = col("plant_id").ok_or(CorpusError::MissingColumn("plant_id"))?;
    let desc_col = col("description").ok_or(CorpusError::MissingColumn("description"))?;
    let level_cols: Vec<(BreakdownLevel, usize)> = BreakdownLevel::ALL
        .iter()
        .filter_map(|l| col(level_column(*l)).map(|c| (*l, c)))
        .collect();

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| CorpusError::MalformedCsv(e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or_default();
        if row.len() != headers.len() {
            rejects.push(Reject {
                row: line,
                reason: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
            continue;
        }
        let record_id = row[id_col].trim();
        let plant_id = row[plant_col].trim();
        if record_id.is_empty() {
            rejects.push(Reject {
                row: line,
                reason: "empty record_id".into(),
            });
            continue;
        }
        let mut record = Record::new(record_id, plant_id, &row[desc_col]);
        let mut problem = None;
        for (level, c) in &level_cols {
            let cell = row[*c].trim();
            if cell.is_empty() {
                continue;
            }
            match ClassCode::parse(cell) {
                Ok(code) => match hierarchies.get(level) {
                    Some(h) if !h.contains(&code) => {
                        problem = Some(format!("{level} code {code} not in hierarchy"));
                        break;
                    }
                    _ => record.labels.set(*level, Some(code)),
                },
                Err(e) => {
                    problem = Some(format!("{level}: {e}"));
                    break;
                }
            }
        }
        if let Some(reason) = problem {
            rejects.push(Reject { row: line, reason });
            continue;
        }
        if !seen.insert((record.plant_id.clone(), record.record_id.clone())) {
            rejects.push(Reject {
                row: line,
                reason: format!("duplicate record key {}", record.key()),
            });
            continue;
        }
        records.push(record);
    }
    Ok(Ingested {
        dataset: Dataset::new(records)?,
        rejects,
    })
}

fn level_column(level: BreakdownLevel) -> &'static str {
    match level {
        BreakdownLevel::Bl0 => "bl0",
        BreakdownLevel::Bl1 => "bl1",
        BreakdownLevel::Bl2 => "bl2",
    }
}

fn validation_size(n: usize, fraction: f64) -> Result<usize, CorpusError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    if n < 2 {
        return Err(CorpusError::TooFewRecords(n));
    }
    Ok(((n as f64 * fraction).round() as usize).clamp(1, n - 1))
}

/// Seeded shuffle, then the last `round(n * fraction)` records become validation.
pub fn split_dataset(ds: &Dataset, validation_fraction: f64, seed: u64) -> Result<Dataset, CorpusError> {
    let n = ds.len();
    let n_val = validation_size(n, validation_fraction)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut split = vec![Split::Train; n];
    for &i in &order[n - n_val..] {
        split[i] = Split::Validation;
    }
    Dataset::with_split(ds.records.clone(), split)
}

/// Like [`split_dataset`] but allocates validation slots per label at `level`
/// (largest remainder), so each class keeps roughly the configured ratio.
pub fn split_dataset_stratified(
    ds: &Dataset,
    validation_fraction: f64,
    seed: u64,
    level: BreakdownLevel,
) -> Result<Dataset, CorpusError> {
    let n = ds.len();
    let n_val = validation_size(n, validation_fraction)?;
    let mut groups: BTreeMap<Option<ClassCode>, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records.iter().enumerate() {
        groups.entry(r.label(level)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exact: Vec<f64> = groups
        .values()
        .map(|g| g.len() as f64 * n_val as f64 / n as f64)
        .collect();
    let mut take: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut remaining = n_val - take.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..exact.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for g in by_remainder {
        if remaining == 0 {
            break;
        }
        take[g] += 1;
        remaining -= 1;
    }
    let mut split = vec![Split::Train; n];
    for (members, k) in groups.values().zip(take) {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        for &i in &members[members.len() - k..] {
            split[i] = Split::Validation;
        }
    }
    Dataset::with_split(ds.records.clone(), split)
}

/// Histogram of labels (the per-class sample count `n`) at one level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub level: BreakdownLevel,
    pub counts: BTreeMap<ClassCode, u64>,
}

impl ClassCounts {
    pub fn new(level: BreakdownLevel, counts: BTreeMap<ClassCode, u64>) -> Self {
        ClassCounts { level, counts }
    }

    pub fn get(&self, code: &ClassCode) -> u64 {
        self.counts.get(code).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

pub fn class_counts(ds: &Dataset, level: BreakdownLevel, split: Split) -> ClassCounts {
    let mut counts = BTreeMap::new();
    for (r, s) in ds.iter() {
        if s != split {
            continue;
        }
        if let Some(code) = r.label(level) {
            *counts.entry(code).or_insert(0) += 1;
        }
    }
    ClassCounts::new(level, counts)
}
