use regex::Regex;
use serde::{Deserialize, Serialize};

/// Ordered lowercase tokens of one cleaned description.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText(pub Vec<String>);

impl TokenizedText {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Normalizes free-text descriptions before tokenization.
///
/// Lowercases, blanks out every character that is not a letter (digits
/// included, which also drops enumerations like "Engine 2"), then collapses
/// whitespace. Extra stop patterns are removed after lowercasing.
#[derive(Debug, Clone, Default)]
pub struct TextCleaner {
    stop_patterns: Vec<Regex>,
}

impl TextCleaner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_stop_patterns<S: AsRef<str>>(patterns: &[S]) -> Result<Self, regex::Error> {
        let stop_patterns = patterns
            .iter()
            .map(|p| Regex::new(p.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TextCleaner { stop_patterns })
    }

    pub fn clean(&self, raw: &str) -> String {
        let mut text = raw.to_lowercase();
        for pattern in &self.stop_patterns {
            text = pattern.replace_all(&text, " ").into_owned();
        }
        let mut out = String::with_capacity(text.len());
        let mut pending_space = false;
        for ch in text.chars() {
            if ch.is_alphabetic() && !ch.is_uppercase() {
                if pending_space && !out.is_empty() {
                    out.push(' ');
                }
                pending_space = false;
                out.push(ch);
            } else {
                pending_space = true;
            }
        }
        out
    }

    pub fn clean_and_tokenize(&self, raw: &str) -> TokenizedText {
        tokenize(&self.clean(raw))
    }
}

pub fn clean_text(raw: &str) -> String {
    TextCleaner::new().clean(raw)
}

pub fn tokenize(cleaned: &str) -> TokenizedText {
    TokenizedText(cleaned.split_whitespace().map(str::to_string).collect())
}
