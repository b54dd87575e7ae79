//! Append-only JSON-lines log of expert label corrections.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use dcm_core::corpus::Dataset;
use dcm_core::{BreakdownLevel, ClassCode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    /// Sequence number assigned when the correction is logged.
    #[serde(default)]
    pub seq: u64,
    pub record: String,
    pub level: BreakdownLevel,
    pub corrected_code: ClassCode,
    pub annotator: String,
    /// UTC seconds.
    pub timestamp: u64,
}

#[derive(Debug)]
pub struct CorrectionLog {
    path: PathBuf,
    file: File,
    entries: Vec<Correction>,
}

impl CorrectionLog {
    /// Opens the log, replaying any entries already on disk.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = Vec::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let c: Correction = serde_json::from_str(&line).map_err(|e| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("{}:{}: {e}", path.display(), i + 1),
                    )
                })?;
                entries.push(c);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(CorrectionLog {
            path: path.to_path_buf(),
            file,
            entries,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, mut c: Correction) -> std::io::Result<Correction> {
        c.seq = self.entries.last().map_or(1, |l| l.seq + 1);
        let mut line = serde_json::to_string(&c).expect("correction serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.entries.push(c.clone());
        Ok(c)
    }

    pub fn entries(&self) -> &[Correction] {
        &self.entries
    }

    pub fn is_active(&self, c: &Correction) -> bool {
        active(&self.entries)
            .get(&(c.record.clone(), c.level))
            .is_some_and(|a| a.seq == c.seq)
    }
}

/// Newest correction per `(record, level)`.
pub fn active(entries: &[Correction]) -> BTreeMap<(String, BreakdownLevel), Correction> {
    let mut out: BTreeMap<(String, BreakdownLevel), Correction> = BTreeMap::new();
    for c in entries {
        let key = (c.record.clone(), c.level);
        if out.get(&key).is_none_or(|prev| prev.seq <= c.seq) {
            out.insert(key, c.clone());
        }
    }
    out
}

/// Copy of `ds` with every active correction applied; returns the number applied.
pub fn apply(ds: &Dataset, entries: &[Correction]) -> (Dataset, usize) {
    let mut out = ds.clone();
    let mut n = 0;
    for ((record, level), c) in active(entries) {
        if let Some(i) = out.find(&record) {
            out.set_label(i, level, Some(c.corrected_code));
            n += 1;
        }
    }
    (out, n)
}
