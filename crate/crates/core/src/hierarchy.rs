//! IEC-81346-style letter-coded class hierarchies.
//!
//! A class code is one to three uppercase letters. Each added letter refines
//! the class named by the shorter prefix, so the parent of `LNA` is `LN` and
//! the root is `L`. Every breakdown level (BL0, BL1, BL2) carries its own
//! hierarchy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Longest code the type can hold, regardless of breakdown level.
pub const MAX_CODE_LEN: usize = 3;

#[derive(Debug, Error, Clone)]
pub enum HierarchyError {
    #[error("invalid class code {text:?}: {reason}")]
    InvalidCode { text: String, reason: &'static str },
    #[error("line {line}: invalid class code {text:?}: {reason}")]
    InvalidCodeAt {
        line: usize,
        text: String,
        reason: &'static str,
    },
    #[error("line {line}: code {code} has {len} letters, {level} allows at most {max}")]
    DepthExceeded {
        line: usize,
        code: String,
        len: usize,
        level: BreakdownLevel,
        max: usize,
    },
    #[error("unknown breakdown level {0:?} (expected BL0, BL1 or BL2)")]
    UnknownLevel(String),
    #[error("failed to read hierarchy file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::sync::Arc<std::io::Error>,
    },
}

/// A validated class code such as `L`, `LN` or `LNA`.
///
/// Stored inline so it is `Copy`; ordering is the lexicographic order of the
/// letters, which puts `L` before `LA` before `LN`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ClassCode {
    letters: [u8; MAX_CODE_LEN],
    len: u8,
}

impl ClassCode {
    /// Validates and uppercases `text`.
    pub fn parse(text: &str) -> Result<Self, HierarchyError> {
        let invalid = |reason| HierarchyError::InvalidCode {
            text: text.to_string(),
            reason,
        };
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(invalid("empty code"));
        }
        if !trimmed.is_ascii() {
            return Err(invalid("only letters A-Z are allowed"));
        }
        if trimmed.len() > MAX_CODE_LEN {
            return Err(invalid("more than 3 letters"));
        }
        let mut letters = [0u8; MAX_CODE_LEN];
        for (slot, b) in letters.iter_mut().zip(trimmed.bytes()) {
            if !b.is_ascii_alphabetic() {
                return Err(invalid("only letters A-Z are allowed"));
            }
            *slot = b.to_ascii_uppercase();
        }
        Ok(ClassCode {
            letters,
            len: trimmed.len() as u8,
        })
    }

    pub fn as_str(&self) -> &str {
        // Only ASCII letters are ever stored.
        std::str::from_utf8(&self.letters[..self.len as usize]).expect("ascii code")
    }

    /// Number of letters, which is also the depth in the hierarchy (roots are 1).
    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn level(&self) -> usize {
        self.len()
    }

    pub fn is_root(&self) -> bool {
        self.len == 1
    }

    /// The code with its last letter dropped; `None` for roots.
    pub fn parent(&self) -> Option<ClassCode> {
        if self.is_root() {
            return None;
        }
        let mut letters = self.letters;
        letters[self.len as usize - 1] = 0;
        Some(ClassCode {
            letters,
            len: self.len - 1,
        })
    }

    /// Proper ancestors, nearest first.
    pub fn ancestors(&self) -> Vec<ClassCode> {
        std::iter::successors(self.parent(), |c| c.parent()).collect()
    }

    /// Root-to-self path, e.g. `[L, LN, LNA]`.
    pub fn path(&self) -> Vec<ClassCode> {
        let mut path = self.ancestors();
        path.reverse();
        path.push(*self);
        path
    }

    /// True when `ancestor` is a prefix of `self` (including equality).
    pub fn is_descendant_or_self(&self, ancestor: &ClassCode) -> bool {
        self.len >= ancestor.len
            && self.letters[..ancestor.len as usize] == ancestor.letters[..ancestor.len as usize]
    }
}

pub fn parse_code(text: &str) -> Result<ClassCode, HierarchyError> {
    ClassCode::parse(text)
}

pub fn parent_of(code: &ClassCode) -> Option<ClassCode> {
    code.parent()
}

pub fn ancestors(code: &ClassCode) -> Vec<ClassCode> {
    code.ancestors()
}

pub fn is_descendant_or_self(a: &ClassCode, b: &ClassCode) -> bool {
    a.is_descendant_or_self(b)
}

impl Ord for ClassCode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.as_str().cmp(other.as_str())
    }
}

impl PartialOrd for ClassCode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ClassCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl fmt::Debug for ClassCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ClassCode({})", self.as_str())
    }
}

impl FromStr for ClassCode {
    type Err = HierarchyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassCode::parse(s)
    }
}

impl Serialize for ClassCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ClassCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ClassCode::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Granularity tier of a system within a plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BreakdownLevel {
    #[serde(rename = "BL0")]
    Bl0,
    #[serde(rename = "BL1")]
    Bl1,
    #[serde(rename = "BL2")]
    Bl2,
}

impl BreakdownLevel {
    pub const ALL: [BreakdownLevel; 3] = [BreakdownLevel::Bl0, BreakdownLevel::Bl1, BreakdownLevel::Bl2];

    pub fn max_depth(self) -> usize {
        match self {
            BreakdownLevel::Bl0 => 1,
            BreakdownLevel::Bl1 | BreakdownLevel::Bl2 => 3,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BreakdownLevel::Bl0 => "BL0",
            BreakdownLevel::Bl1 => "BL1",
            BreakdownLevel::Bl2 => "BL2",
        }
    }
}

impl fmt::Display for BreakdownLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for BreakdownLevel {
    type Err = HierarchyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BL0" | "0" => Ok(BreakdownLevel::Bl0),
            "BL1" | "1" => Ok(BreakdownLevel::Bl1),
            "BL2" | "2" => Ok(BreakdownLevel::Bl2),
            _ => Err(HierarchyError::UnknownLevel(s.to_string())),
        }
    }
}

/// The class tree of one breakdown level, closed under parents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hierarchy {
    level: BreakdownLevel,
    codes: BTreeSet<ClassCode>,
    labels: BTreeMap<ClassCode, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

impl Hierarchy {
    /// Builds a hierarchy from arbitrary codes, inserting missing prefixes.
    pub fn from_codes<I>(level: BreakdownLevel, codes: I) -> Result<Self, HierarchyError>
    where
        I: IntoIterator<Item = ClassCode>,
    {
        let mut h = Hierarchy {
            level,
            codes: BTreeSet::new(),
            labels: BTreeMap::new(),
            warnings: Vec::new(),
        };
        let mut explicit = Vec::new();
        for (i, code) in codes.into_iter().enumerate() {
            h.check_depth(code, i + 1)?;
            explicit.push(code);
        }
        h.codes.extend(explicit.iter().copied());
        h.close_under_parents();
        Ok(h)
    }

    /// Parses the `CODE[,label]` line format.
    pub fn parse(text: &str, level: BreakdownLevel) -> Result<Self, HierarchyError> {
        let mut h = Hierarchy {
            level,
            codes: BTreeSet::new(),
            labels: BTreeMap::new(),
            warnings: Vec::new(),
        };
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (code_text, label) = match line.split_once(',') {
                Some((c, l)) => (c.trim(), Some(l.trim())),
                None => (line, None),
            };
            if code_text.len() > level.max_depth()
                && code_text.bytes().all(|b| b.is_ascii_alphabetic())
            {
                return Err(HierarchyError::DepthExceeded {
                    line: line_no,
                    code: code_text.to_ascii_uppercase(),
                    len: code_text.len(),
                    level,
                    max: level.max_depth(),
                });
            }
            let code = ClassCode::parse(code_text).map_err(|e| match e {
                HierarchyError::InvalidCode { text, reason } => HierarchyError::InvalidCodeAt {
                    line: line_no,
                    text,
                    reason,
                },
                other => other,
            })?;
            h.check_depth(code, line_no)?;
            h.codes.insert(code);
            if let Some(label) = label.filter(|l| !l.is_empty()) {
                h.labels.insert(code, label.to_string());
            }
        }
        h.close_under_parents();
        Ok(h)
    }

    pub fn load(path: impl AsRef<Path>, level: BreakdownLevel) -> Result<Self, HierarchyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HierarchyError::Io {
            path: path.display().to_string(),
            source: std::sync::Arc::new(e),
        })?;
        Self::parse(&text, level)
    }

    fn check_depth(&self, code: ClassCode, line: usize) -> Result<(), HierarchyError> {
        if code.len() > self.level.max_depth() {
            return Err(HierarchyError::DepthExceeded {
                line,
                code: code.to_string(),
                len: code.len(),
                level: self.level,
                max: self.level.max_depth(),
            });
        }
        Ok(())
    }

    fn close_under_parents(&mut self) {
        let mut missing = BTreeSet::new();
        for code in &self.codes {
            for anc in code.ancestors() {
                if !self.codes.contains(&anc) {
                    missing.insert(anc);
                }
            }
        }
        for code in missing {
            self.warnings
                .push(format!("inserted missing intermediate class {code}"));
            self.codes.insert(code);
        }
    }

    pub fn level(&self) -> BreakdownLevel {
        self.level
    }

    pub fn contains(&self, code: &ClassCode) -> bool {
        self.codes.contains(code)
    }

    pub fn codes(&self) -> impl Iterator<Item = &ClassCode> + '_ {
        self.codes.iter()
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn label(&self, code: &ClassCode) -> Option<&str> {
        self.labels.get(code).map(String::as_str)
    }

    pub fn set_label(&mut self, code: ClassCode, label: impl Into<String>) {
        self.labels.insert(code, label.into());
    }

    /// Messages about prefixes that were inserted automatically.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn roots(&self) -> impl Iterator<Item = &ClassCode> + '_ {
        self.codes.iter().filter(|c| c.is_root())
    }

    pub fn children(&self, code: &ClassCode) -> Vec<ClassCode> {
        self.descendants(code)
            .into_iter()
            .filter(|c| c.len() == code.len() + 1)
            .collect()
    }

    /// Proper descendants of `code` present in the hierarchy, in code order.
    pub fn descendants(&self, code: &ClassCode) -> Vec<ClassCode> {
        self.codes
            .range(*code..)
            .skip(1)
            .take_while(|c| c.is_descendant_or_self(code))
            .copied()
            .collect()
    }

    pub fn is_leaf(&self, code: &ClassCode) -> bool {
        self.descendants(code).is_empty()
    }

    pub fn leaves(&self) -> Vec<ClassCode> {
        self.codes.iter().filter(|c| self.is_leaf(c)).copied().collect()
    }

    /// Serializes back to the `CODE[,label]` line format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for code in &self.codes {
            match self.labels.get(code) {
                Some(label) => out.push_str(&format!("{code},{label}\n")),
                None => out.push_str(&format!("{code}\n")),
            }
        }
        out
    }
}

pub fn load_hierarchy(
    path: impl AsRef<Path>,
    level: BreakdownLevel,
) -> Result<Hierarchy, HierarchyError> {
    Hierarchy::load(path, level)
}
