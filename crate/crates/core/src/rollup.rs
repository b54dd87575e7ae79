//! Dynamic class management: fold under-represented classes into their
//! hierarchy parents before training.
//!
//! Classes are visited deepest first, lexicographically within a depth. A
//! non-root class whose accumulated count is below `v` hands all of its
//! samples to its parent, so a child can lift its parent over the threshold
//! or push it further up (cascade). Roots never merge. After the sweep, any
//! class left with fewer than `min_support` samples is discarded, and roots
//! still below `v` are handled by [`RootPolicy`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{ClassCounts, Dataset};
use crate::hierarchy::{BreakdownLevel, ClassCode, Hierarchy};

pub const DEFAULT_MIN_SUPPORT: u64 = 10;

#[derive(Debug, Error)]
pub enum RollupError {
    #[error("class {0} is not part of the {1} hierarchy")]
    UnknownClass(ClassCode, BreakdownLevel),
    #[error("mapping is for {mapping}, requested {requested}")]
    LevelMismatch {
        mapping: BreakdownLevel,
        requested: BreakdownLevel,
    },
    #[error("invalid rollup config: {0}")]
    InvalidConfig(String),
    #[error("malformed mapping file: {0}")]
    Malformed(String),
}

/// What happens to a root class that ends the sweep below `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RootPolicy {
    /// Keep it as long as it reaches `min_support`.
    #[default]
    KeepIfMinSupport,
    DiscardBelowV,
}

impl FromStr for RootPolicy {
    type Err = RollupError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "keep_if_min_support" | "keep" => Ok(RootPolicy::KeepIfMinSupport),
            "discard_below_v" | "discard" => Ok(RootPolicy::DiscardBelowV),
            _ => Err(RollupError::InvalidConfig(format!("unknown root policy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollupConfig {
    pub v: u64,
    #[serde(default = "default_min_support")]
    pub min_support: u64,
    #[serde(default)]
    pub root_policy: RootPolicy,
}

fn default_min_support() -> u64 {
    DEFAULT_MIN_SUPPORT
}

impl RollupConfig {
    pub fn new(v: u64) -> Self {
        RollupConfig {
            v,
            min_support: DEFAULT_MIN_SUPPORT,
            root_policy: RootPolicy::default(),
        }
    }

    /// Flat baseline: no merging, only the `min_support` floor.
    pub fn flat() -> Self {
        Self::new(0)
    }

    pub fn validate(&self) -> Result<(), RollupError> {
        if self.root_policy == RootPolicy::DiscardBelowV && self.min_support == 0 {
            return Err(RollupError::InvalidConfig(
                "min_support must be at least 1 when roots may be discarded".into(),
            ));
        }
        Ok(())
    }
}

impl Default for RollupConfig {
    fn default() -> Self {
        Self::flat()
    }
}

/// Where the samples of a source class end up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Class(ClassCode),
    Discarded,
}

impl Target {
    pub fn class(&self) -> Option<ClassCode> {
        match self {
            Target::Class(c) => Some(*c),
            Target::Discarded => None,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Class(c) => f.pad(c.as_str()),
            Target::Discarded => f.pad("DISCARDED"),
        }
    }
}

impl FromStr for Target {
    type Err = RollupError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "DISCARDED" {
            return Ok(Target::Discarded);
        }
        ClassCode::parse(s)
            .map(Target::Class)
            .map_err(|e| RollupError::Malformed(e.to_string()))
    }
}

impl Serialize for Target {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping {
    pub level: BreakdownLevel,
    pub map: BTreeMap<ClassCode, Target>,
    pub retained: ClassCounts,
}

impl LabelMapping {
    /// Maps `code`, walking up its ancestors when the code itself was never
    /// seen during the rollup (e.g. a class only present in validation data).
    pub fn resolve(&self, code: &ClassCode) -> Option<ClassCode> {
        std::iter::once(*code)
            .chain(code.ancestors())
            .find_map(|c| self.map.get(&c))
            .and_then(Target::class)
    }

    pub fn retained_classes(&self) -> impl Iterator<Item = &ClassCode> + '_ {
        self.retained.counts.keys()
    }

    /// CSV `source_code,target_code_or_DISCARDED`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source_code,target_code_or_DISCARDED\n");
        for (source, target) in &self.map {
            out.push_str(&format!("{source},{target}\n"));
        }
        out
    }

    /// Reads a mapping CSV back; retained counts are not part of the file
    /// and come back as zero for every retained class.
    pub fn from_csv(level: BreakdownLevel, text: &str) -> Result<Self, RollupError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let (source, target) = line
                .split_once(',')
                .ok_or_else(|| RollupError::Malformed(format!("line {}: expected 2 fields", i + 1)))?;
            let source = ClassCode::parse(source)
                .map_err(|e| RollupError::Malformed(format!("line {}: {e}", i + 1)))?;
            map.insert(source, target.parse()?);
        }
        let retained = map
            .values()
            .filter_map(Target::class)
            .map(|c| (c, 0))
            .collect();
        Ok(LabelMapping {
            level,
            map,
            retained: ClassCounts::new(level, retained),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeStep {
    pub merged_class: ClassCode,
    pub target_class: ClassCode,
    pub samples_moved: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RollupAudit {
    pub steps: Vec<MergeStep>,
    pub discarded: Vec<(ClassCode, u64)>,
}

impl RollupAudit {
    /// CSV `merged_class,target_class,samples_moved`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("merged_class,target_class,samples_moved\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{}\n",
                s.merged_class, s.target_class, s.samples_moved
            ));
        }
        out
    }
}

pub fn compute_rollup(
    counts: &ClassCounts,
    h: &Hierarchy,
    cfg: &RollupConfig,
) -> Result<(LabelMapping, RollupAudit), RollupError> {
    cfg.validate()?;
    for code in counts.counts.keys() {
        if !h.contains(code) {
            return Err(RollupError::UnknownClass(*code, h.level()));
        }
    }

    let mut acc: BTreeMap<ClassCode, u64> = counts.counts.clone();
    let mut merged_into: BTreeMap<ClassCode, ClassCode> = BTreeMap::new();
    let mut audit = RollupAudit::default();
    let max_depth = acc.keys().map(ClassCode::len).max().unwrap_or(0);
    for depth in (2..=max_depth).rev() {
        let tier: Vec<ClassCode> = acc.keys().filter(|c| c.len() == depth).copied().collect();
        for code in tier {
            let n = acc[&code];
            if n >= cfg.v {
                continue;
            }
            let parent = code.parent().expect("non-root code has a parent");
            acc.remove(&code);
            *acc.entry(parent).or_insert(0) += n;
            merged_into.insert(code, parent);
            if n > 0 {
                audit.steps.push(MergeStep {
                    merged_class: code,
                    target_class: parent,
                    samples_moved: n,
                });
            }
        }
    }

    let mut retained = BTreeMap::new();
    for (&code, &n) in &acc {
        let keep = if n == 0 || n < cfg.min_support {
            false
        } else if code.is_root() && n < cfg.v {
            cfg.root_policy == RootPolicy::KeepIfMinSupport
        } else {
            true
        };
        if keep {
            retained.insert(code, n);
        } else {
            audit.discarded.push((code, n));
        }
    }

    let terminal = |mut code: ClassCode| {
        while let Some(next) = merged_into.get(&code) {
            code = *next;
        }
        code
    };
    let mut map = BTreeMap::new();
    for &source in counts.counts.keys().chain(acc.keys()) {
        let t = terminal(source);
        let target = if retained.contains_key(&t) {
            Target::Class(t)
        } else {
            Target::Discarded
        };
        map.insert(source, target);
    }

    Ok((
        LabelMapping {
            level: h.level(),
            map,
            retained: ClassCounts::new(h.level(), retained),
        },
        audit,
    ))
}

/// A dataset relabeled through a [`LabelMapping`].
#[derive(Debug, Clone)]
pub struct Relabeled {
    pub dataset: Dataset,
    /// Indices of labeled records that no retained class covers; their label
    /// at the mapped level is cleared.
    pub excluded: Vec<usize>,
    pub n_rewritten: usize,
}

impl Relabeled {
    pub fn n_excluded(&self) -> usize {
        self.excluded.len()
    }
}

pub fn apply_mapping(
    ds: &Dataset,
    level: BreakdownLevel,
    m: &LabelMapping,
) -> Result<Relabeled, RollupError> {
    if m.level != level {
        return Err(RollupError::LevelMismatch {
            mapping: m.level,
            requested: level,
        });
    }
    let mut out = ds.clone();
    let mut excluded = Vec::new();
    let mut n_rewritten = 0;
    for (i, record) in ds.records().iter().enumerate() {
        let Some(code) = record.label(level) else {
            continue;
        };
        match m.resolve(&code) {
            Some(target) => {
                if target != code {
                    out.set_label(i, level, Some(target));
                    n_rewritten += 1;
                }
            }
            None => {
                out.set_label(i, level, None);
                excluded.push(i);
            }
        }
    }
    Ok(Relabeled {
        dataset: out,
        excluded,
        n_rewritten,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingSummary {
    pub level: BreakdownLevel,
    pub retained: usize,
    pub merged_one_level: usize,
    pub merged_two_levels: usize,
    pub merged_then_discarded: usize,
    pub discarded: usize,
    pub samples_moved: u64,
    pub samples_discarded: u64,
}

impl MappingSummary {
    pub fn merged(&self) -> usize {
        self.merged_one_level + self.merged_two_levels
    }
}

impl fmt::Display for MappingSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Rollup summary ({})", self.level)?;
        writeln!(f, "{:<28}{:>8}", "retained classes", self.retained)?;
        writeln!(f, "{:<28}{:>8}", "merged one level up", self.merged_one_level)?;
        writeln!(f, "{:<28}{:>8}", "merged two levels up", self.merged_two_levels)?;
        writeln!(f, "{:<28}{:>8}", "merged, then discarded", self.merged_then_discarded)?;
        writeln!(f, "{:<28}{:>8}", "discarded classes", self.discarded)?;
        writeln!(f, "{:<28}{:>8}", "samples moved", self.samples_moved)?;
        write!(f, "{:<28}{:>8}", "samples discarded", self.samples_discarded)
    }
}

pub fn mapping_summary(m: &LabelMapping, a: &RollupAudit) -> MappingSummary {
    let mut s = MappingSummary {
        level: m.level,
        retained: m.retained.len(),
        merged_one_level: 0,
        merged_two_levels: 0,
        merged_then_discarded: 0,
        discarded: a.discarded.len(),
        samples_moved: a.steps.iter().map(|s| s.samples_moved).sum(),
        samples_discarded: a.discarded.iter().map(|(_, n)| n).sum(),
    };
    let discarded: std::collections::BTreeSet<_> = a.discarded.iter().map(|(c, _)| *c).collect();
    for (source, target) in &m.map {
        match target {
            Target::Class(t) if t == source => {}
            Target::Class(t) => match source.len() - t.len() {
                1 => s.merged_one_level += 1,
                _ => s.merged_two_levels += 1,
            },
            Target::Discarded if !discarded.contains(source) => s.merged_then_discarded += 1,
            Target::Discarded => {}
        }
    }
    s
}
