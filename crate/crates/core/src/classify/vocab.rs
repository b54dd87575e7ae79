use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ClassifyError;
use crate::corpus::TokenizedText;

/// Token to dense feature index, ranked by document frequency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    df: Vec<u32>,
    n_docs: usize,
    cap: Option<usize>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    df: Vec<u32>,
    n_docs: usize,
    cap: Option<usize>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let index = r
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens: r.tokens,
            df: r.df,
            n_docs: r.n_docs,
            cap: r.cap,
            index,
        }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            df: v.df,
            n_docs: v.n_docs,
            cap: v.cap,
        }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, idx: u32) -> Option<&str> {
        self.tokens.get(idx as usize).map(String::as_str)
    }

    /// Number of training documents containing the token.
    pub fn document_frequency(&self, token: &str) -> Option<u32> {
        self.index_of(token).map(|i| self.df[i as usize])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }
}

pub fn build_vocabulary(
    train_docs: &[TokenizedText],
    cap: Option<usize>,
) -> Result<Vocabulary, ClassifyError> {
    if train_docs.is_empty() {
        return Err(ClassifyError::EmptyCorpus);
    }
    let mut df: HashMap<&str, u32> = HashMap::new();
    let mut seen: Vec<&str> = Vec::new();
    for doc in train_docs {
        seen.clear();
        seen.extend(doc.tokens().iter().map(String::as_str));
        seen.sort_unstable();
        seen.dedup();
        for t in &seen {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, u32)> = df.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if let Some(cap) = cap {
        ranked.truncate(cap);
    }
    Ok(VocabularyRepr {
        tokens: ranked.iter().map(|(t, _)| t.to_string()).collect(),
        df: ranked.iter().map(|(_, d)| *d).collect(),
        n_docs: train_docs.len(),
        cap,
    }
    .into())
}

/// Sparse token counts, sorted by feature index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountVector {
    entries: Vec<(u32, u32)>,
}

impl CountVector {
    /// Builds from `(feature, count)` pairs; duplicates are summed and zero
    /// counts dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut entries: Vec<(u32, u32)> = pairs.into_iter().filter(|(_, c)| *c > 0).collect();
        entries.sort_unstable();
        let mut merged: Vec<(u32, u32)> = Vec::with_capacity(entries.len());
        for (f, c) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == f => last.1 += c,
                _ => merged.push((f, c)),
            }
        }
        CountVector { entries: merged }
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn get(&self, feature: u32) -> u32 {
        self.entries
            .binary_search_by_key(&feature, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|(_, c)| *c as u64).sum()
    }
}

pub fn vectorize(doc: &TokenizedText, v: &Vocabulary) -> CountVector {
    CountVector::from_pairs(doc.tokens().iter().filter_map(|t| v.index_of(t)).map(|i| (i, 1)))
}
