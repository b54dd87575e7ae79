//! Classified records as subject-predicate-object statements.
//!
//! Each classified record becomes
//! `<base/plant-slug/record-slug> <vocab#ClassifiedAs> <vocab#PowerPlantComponentCODE>`,
//! one statement per classified breakdown level.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::Record;
use crate::hierarchy::{BreakdownLevel, ClassCode, Hierarchy};

#[derive(Debug, thiserror::Error, Clone)]
pub enum KbError {
    #[error("invalid IRI {0:?}")]
    InvalidIri(String),
    #[error("invalid mapping context: {0}")]
    InvalidContext(String),
    #[error("line {0}: {1}")]
    ParseError(usize, String),
    #[error("class {0} is not in the {1} hierarchy")]
    UnknownClass(ClassCode, BreakdownLevel),
    #[error("{path}: {source}")]
    Io { path: String, source: Arc<std::io::Error> },
}

fn io_err(path: &Path, e: std::io::Error) -> KbError {
    KbError::Io {
        path: path.display().to_string(),
        source: Arc::new(e),
    }
}

/// An absolute IRI: a scheme, a colon, and no whitespace or delimiter characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Iri(Arc<str>);

impl Iri {
    pub fn new(s: &str) -> Result<Self, KbError> {
        let bad = || KbError::InvalidIri(s.to_string());
        let colon = s.find(':').ok_or_else(bad)?;
        let scheme = &s[..colon];
        let mut chars = scheme.chars();
        if !chars.next().is_some_and(|c| c.is_ascii_alphabetic())
            || !chars.all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c))
        {
            return Err(bad());
        }
        if s.len() == colon + 1 || s.chars().any(|c| c.is_whitespace() || c.is_control() || "<>\"{}|^`\\".contains(c)) {
            return Err(bad());
        }
        Ok(Iri(Arc::from(s)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self.0)
    }
}

impl Serialize for Iri {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Iri {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Iri::new(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: Iri,
    pub predicate: Iri,
    pub object: Iri,
}

impl Triple {
    pub fn new(subject: Iri, predicate: Iri, object: Iri) -> Self {
        Triple {
            subject,
            predicate,
            object,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} .", self.subject, self.predicate, self.object)
    }
}

/// In-memory set of triples indexed by each position.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripleStore {
    triples: BTreeSet<Triple>,
    by_subject: BTreeMap<Iri, BTreeSet<Triple>>,
    by_predicate: BTreeMap<Iri, BTreeSet<Triple>>,
    by_object: BTreeMap<Iri, BTreeSet<Triple>>,
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false when the triple was already present.
    pub fn insert(&mut self, t: Triple) -> bool {
        if !self.triples.insert(t.clone()) {
            return false;
        }
        self.by_subject.entry(t.subject.clone()).or_default().insert(t.clone());
        self.by_predicate.entry(t.predicate.clone()).or_default().insert(t.clone());
        self.by_object.entry(t.object.clone()).or_default().insert(t);
        true
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Triple>) {
        for t in ts {
            self.insert(t);
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triple> + '_ {
        self.triples.iter()
    }

    /// Triples matching every bound component; unbound components match anything.
    pub fn match_pattern(&self, s: Option<&Iri>, p: Option<&Iri>, o: Option<&Iri>) -> Vec<Triple> {
        let empty = BTreeSet::new();
        // drive the scan from the most selective bound index
        let candidates: Vec<&BTreeSet<Triple>> = [
            s.map(|s| self.by_subject.get(s).unwrap_or(&empty)),
            p.map(|p| self.by_predicate.get(p).unwrap_or(&empty)),
            o.map(|o| self.by_object.get(o).unwrap_or(&empty)),
        ]
        .into_iter()
        .flatten()
        .collect();
        let base = candidates.iter().min_by_key(|c| c.len()).copied().unwrap_or(&self.triples);
        base.iter()
            .filter(|t| {
                s.is_none_or(|s| &t.subject == s)
                    && p.is_none_or(|p| &t.predicate == p)
                    && o.is_none_or(|o| &t.object == o)
            })
            .cloned()
            .collect()
    }
}

impl FromIterator<Triple> for TripleStore {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        let mut ts = TripleStore::new();
        ts.extend(iter);
        ts
    }
}

pub fn match_pattern(ts: &TripleStore, s: Option<&Iri>, p: Option<&Iri>, o: Option<&Iri>) -> Vec<Triple> {
    ts.match_pattern(s, p, o)
}

pub const DEFAULT_CLASS_TEMPLATE: &str = "PowerPlantComponent";
pub const CLASSIFIED_AS: &str = "ClassifiedAs";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingContext {
    /// Prefix of subject IRIs; a trailing `/` is added when missing.
    pub base_iri: String,
    /// Expansion of the `iec-81346:` prefix.
    pub vocab_prefix: String,
    #[serde(default = "default_template")]
    pub class_iri_template: String,
}

fn default_template() -> String {
    DEFAULT_CLASS_TEMPLATE.to_string()
}

impl Default for MappingContext {
    fn default() -> Self {
        MappingContext {
            base_iri: "http://example.org/plant/".into(),
            vocab_prefix: "http://example.org/iec-81346#".into(),
            class_iri_template: default_template(),
        }
    }
}

impl MappingContext {
    pub fn validate(&self) -> Result<(), KbError> {
        let check = |what: &str, s: &str| {
            Iri::new(s).map_err(|_| KbError::InvalidContext(format!("{what} {s:?} is not an absolute IRI")))
        };
        check("base_iri", &self.base_iri)?;
        check("vocab_prefix", &self.vocab_prefix)?;
        check("class IRI", &format!("{}{}A", self.vocab_prefix, self.class_iri_template))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let ctx: MappingContext =
            serde_json::from_str(&text).map_err(|e| KbError::InvalidContext(e.to_string()))?;
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn classified_as(&self) -> Iri {
        Iri::new(&format!("{}{CLASSIFIED_AS}", self.vocab_prefix)).expect("validated context")
    }

    pub fn class_iri(&self, code: ClassCode) -> Iri {
        Iri::new(&format!("{}{}{}", self.vocab_prefix, self.class_iri_template, code.as_str()))
            .expect("validated context")
    }

    /// Inverse of [`Self::class_iri`].
    pub fn class_of(&self, iri: &Iri) -> Option<ClassCode> {
        let rest = iri
            .as_str()
            .strip_prefix(&self.vocab_prefix)?
            .strip_prefix(&self.class_iri_template)?;
        ClassCode::parse(rest).ok().filter(|c| c.as_str() == rest)
    }

    pub fn subject(&self, plant_id: &str, record_id: &str) -> Result<Iri, KbError> {
        let (p, r) = (slug(plant_id), slug(record_id));
        if p.is_empty() || r.is_empty() {
            return Err(KbError::InvalidContext(format!(
                "record {plant_id:?}/{record_id:?} has an empty identifier slug"
            )));
        }
        let sep = if self.base_iri.ends_with('/') || self.base_iri.ends_with('#') { "" } else { "/" };
        Iri::new(&format!("{}{sep}{p}/{r}", self.base_iri))
    }
}

/// Lowercase, spaces to hyphens, everything else non-alphanumeric dropped.
pub fn slug(s: &str) -> String {
    s.trim()
        .chars()
        .filter_map(|c| {
            if c == ' ' || c == '-' {
                Some('-')
            } else if c.is_alphanumeric() {
                Some(c)
            } else {
                None
            }
        })
        .flat_map(char::to_lowercase)
        .collect()
}

pub fn record_to_triples(
    r: &Record,
    predictions: &BTreeMap<BreakdownLevel, ClassCode>,
    ctx: &MappingContext,
) -> Result<Vec<Triple>, KbError> {
    ctx.validate()?;
    if predictions.is_empty() {
        return Ok(Vec::new());
    }
    let subject = ctx.subject(&r.plant_id, &r.record_id)?;
    let pred = ctx.classified_as();
    Ok(predictions
        .values()
        .map(|c| Triple::new(subject.clone(), pred.clone(), ctx.class_iri(*c)))
        .collect())
}

#[derive(Debug, Clone, Default)]
pub struct Mapped {
    pub store: TripleStore,
    /// Subjects produced by more than one record key.
    pub collisions: BTreeMap<Iri, Vec<String>>,
}

pub fn map_records<'a>(
    items: impl IntoIterator<Item = (&'a Record, BTreeMap<BreakdownLevel, ClassCode>)>,
    ctx: &MappingContext,
) -> Result<Mapped, KbError> {
    let mut out = Mapped::default();
    let mut owners: BTreeMap<Iri, Vec<String>> = BTreeMap::new();
    for (r, preds) in items {
        let ts = record_to_triples(r, &preds, ctx)?;
        if let Some(t) = ts.first() {
            let keys = owners.entry(t.subject.clone()).or_default();
            if !keys.contains(&r.key()) {
                keys.push(r.key());
            }
        }
        out.store.extend(ts);
    }
    out.collisions = owners.into_iter().filter(|(_, k)| k.len() > 1).collect();
    Ok(out)
}

pub fn to_ntriples(ts: &TripleStore) -> String {
    let mut lines: Vec<String> = ts.iter().map(Triple::to_string).collect();
    lines.sort();
    let mut s = lines.join("\n");
    if !s.is_empty() {
        s.push('\n');
    }
    s
}

pub fn serialize_ntriples(ts: &TripleStore, path: &Path) -> Result<usize, KbError> {
    std::fs::write(path, to_ntriples(ts)).map_err(|e| io_err(path, e))?;
    Ok(ts.len())
}

fn take_iri<'a>(rest: &'a str, line: usize) -> Result<(Iri, &'a str), KbError> {
    let rest = rest.trim_start();
    let body = rest
        .strip_prefix('<')
        .ok_or_else(|| KbError::ParseError(line, "expected '<'".into()))?;
    let end = body
        .find('>')
        .ok_or_else(|| KbError::ParseError(line, "unterminated IRI".into()))?;
    let iri = Iri::new(&body[..end]).map_err(|e| KbError::ParseError(line, e.to_string()))?;
    Ok((iri, &body[end + 1..]))
}

pub fn parse_ntriples_str(text: &str) -> Result<TripleStore, KbError> {
    let mut ts = TripleStore::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (s, rest) = take_iri(line, line_no)?;
        let (p, rest) = take_iri(rest, line_no)?;
        let (o, rest) = take_iri(rest, line_no)?;
        if rest.trim() != "." {
            return Err(KbError::ParseError(line_no, "expected terminating '.'".into()));
        }
        ts.insert(Triple::new(s, p, o));
    }
    Ok(ts)
}

pub fn parse_ntriples(path: &Path) -> Result<TripleStore, KbError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_ntriples_str(&text)
}

/// Subjects classified as `code`, or also as any code it prefixes when
/// `include_subclasses` is set. Sorted and deduplicated.
pub fn query_classified_as(
    ts: &TripleStore,
    code: ClassCode,
    include_subclasses: bool,
    h: &Hierarchy,
    ctx: &MappingContext,
) -> Result<Vec<Iri>, KbError> {
    if !h.contains(&code) {
        return Err(KbError::UnknownClass(code, h.level()));
    }
    let pred = ctx.classified_as();
    let subjects: BTreeSet<Iri> = if include_subclasses {
        ts.match_pattern(None, Some(&pred), None)
            .into_iter()
            .filter(|t| ctx.class_of(&t.object).is_some_and(|c| c.is_descendant_or_self(&code)))
            .map(|t| t.subject)
            .collect()
    } else {
        ts.match_pattern(None, Some(&pred), Some(&ctx.class_iri(code)))
            .into_iter()
            .map(|t| t.subject)
            .collect()
    };
    Ok(subjects.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(s: &str) -> ClassCode {
        ClassCode::parse(s).unwrap()
    }

    fn example_store(ctx: &MappingContext) -> TripleStore {
        let rows = [
            Record::new("100", "Power plant 1", "First Engine Circuit Breaker"),
            Record::new("101", "Power plant 1", "Second Engine Circuit Breaker"),
        ];
        let preds: BTreeMap<_, _> = [(BreakdownLevel::Bl2, code("QA"))].into();
        map_records(rows.iter().map(|r| (r, preds.clone())), ctx).unwrap().store
    }

    #[test]
    fn circuit_breaker_rows() {
        let ctx = MappingContext::default();
        let r = Record::new("100", "Power plant 1", "First Engine Circuit Breaker");
        let preds: BTreeMap<_, _> = [(BreakdownLevel::Bl2, code("QA"))].into();
        let ts = record_to_triples(&r, &preds, &ctx).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(
            ts[0].to_string(),
            "<http://example.org/plant/power-plant-1/100> <http://example.org/iec-81346#ClassifiedAs> \
             <http://example.org/iec-81346#PowerPlantComponentQA> ."
        );

        let store = example_store(&ctx);
        let hits = store.match_pattern(None, Some(&ctx.classified_as()), Some(&ctx.class_iri(code("QA"))));
        let subjects: Vec<&str> = hits.iter().map(|t| t.subject.as_str()).collect();
        assert_eq!(
            subjects,
            ["http://example.org/plant/power-plant-1/100", "http://example.org/plant/power-plant-1/101"]
        );
    }

    #[test]
    fn one_triple_per_level() {
        let ctx = MappingContext::default();
        let r = Record::new("7", "P", "x");
        assert!(record_to_triples(&r, &BTreeMap::new(), &ctx).unwrap().is_empty());
        let preds: BTreeMap<_, _> = [(BreakdownLevel::Bl1, code("MA")), (BreakdownLevel::Bl2, code("QA"))].into();
        let ts = record_to_triples(&r, &preds, &ctx).unwrap();
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].subject, ts[1].subject);
    }

    #[test]
    fn slugs_and_collisions() {
        assert_eq!(slug("Power plant 1"), "power-plant-1");
        assert_eq!(slug("A/B #2"), "ab-2");
        let ctx = MappingContext::default();
        let a = Record::new("1", "Plant A", "x");
        let b = Record::new("1", "plant-a", "y");
        let preds: BTreeMap<_, _> = [(BreakdownLevel::Bl0, code("A"))].into();
        let m = map_records([(&a, preds.clone()), (&b, preds)], &ctx).unwrap();
        assert_eq!(m.store.len(), 1);
        assert_eq!(m.collisions.len(), 1);
    }

    #[test]
    fn invalid_context() {
        let ctx = MappingContext {
            base_iri: "not an iri".into(),
            ..MappingContext::default()
        };
        let preds: BTreeMap<_, _> = [(BreakdownLevel::Bl0, code("A"))].into();
        assert!(matches!(
            record_to_triples(&Record::new("1", "p", "x"), &preds, &ctx),
            Err(KbError::InvalidContext(_))
        ));
    }

    #[test]
    fn iri_rules() {
        assert!(Iri::new("http://x/y").is_ok());
        assert!(Iri::new("urn:a").is_ok());
        for bad in ["", "noscheme", "1http://x", "http://a b", "http:", "http://x>"] {
            assert!(Iri::new(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn ntriples_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.nt");
        assert_eq!(serialize_ntriples(&TripleStore::new(), &path).unwrap(), 0);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
        assert!(parse_ntriples(&path).unwrap().is_empty());

        let ctx = MappingContext::default();
        let store = example_store(&ctx);
        assert_eq!(serialize_ntriples(&store, &path).unwrap(), 2);
        let first = std::fs::read(&path).unwrap();
        let back = parse_ntriples(&path).unwrap();
        assert_eq!(back, store);
        serialize_ntriples(&back, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn parse_errors_carry_line() {
        let text = "<urn:a> <urn:b> <urn:c> .\n<urn:a> <urn:b> <urn:d>\n";
        assert!(matches!(parse_ntriples_str(text), Err(KbError::ParseError(2, _))));
        assert!(matches!(parse_ntriples_str("<urn:a> <urn:b> .\n"), Err(KbError::ParseError(1, _))));
    }

    #[test]
    fn duplicate_insert_is_noop() {
        let t = Triple::new(Iri::new("urn:a").unwrap(), Iri::new("urn:b").unwrap(), Iri::new("urn:c").unwrap());
        let mut ts = TripleStore::new();
        assert!(ts.insert(t.clone()));
        assert!(!ts.insert(t.clone()));
        assert_eq!(ts.len(), 1);
        assert_eq!(ts.match_pattern(Some(&t.subject), Some(&t.predicate), Some(&t.object)), vec![t.clone()]);
        assert!(ts.match_pattern(Some(&Iri::new("urn:zz").unwrap()), None, None).is_empty());
        assert_eq!(ts.match_pattern(None, None, None).len(), 1);
    }

    #[test]
    fn subclass_closure() {
        let ctx = MappingContext::default();
        let h = Hierarchy::from_codes(BreakdownLevel::Bl2, ["L", "LA", "LN", "LNA"].map(code)).unwrap();
        let x1 = Iri::new("urn:x1").unwrap();
        let x2 = Iri::new("urn:x2").unwrap();
        let ts: TripleStore = [
            Triple::new(x1.clone(), ctx.classified_as(), ctx.class_iri(code("LNA"))),
            Triple::new(x2.clone(), ctx.classified_as(), ctx.class_iri(code("LA"))),
        ]
        .into_iter()
        .collect();
        assert_eq!(query_classified_as(&ts, code("L"), true, &h, &ctx).unwrap(), [x1.clone(), x2]);
        assert_eq!(query_classified_as(&ts, code("LN"), true, &h, &ctx).unwrap(), [x1.clone()]);
        assert_eq!(query_classified_as(&ts, code("LNA"), false, &h, &ctx).unwrap(), [x1]);
        assert!(query_classified_as(&ts, code("L"), false, &h, &ctx).unwrap().is_empty());
        assert!(matches!(
            query_classified_as(&ts, code("Q"), true, &h, &ctx),
            Err(KbError::UnknownClass(..))
        ));
    }
}
