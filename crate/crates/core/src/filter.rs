//! Removal of low-level features (punctuation, digits, whitespace) based on
//! their top-activating tokens.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::sae::FeatureStats;

/// Word-boundary prefixes used by common subword tokenizers.
const BOUNDARY_MARKERS: [char; 2] = ['\u{2581}', '\u{120}'];

/// Trims whitespace, strips leading word-boundary markers and lowercases.
pub fn normalize_token(token: &str) -> String {
    token
        .trim()
        .trim_start_matches(BOUNDARY_MARKERS)
        .trim()
        .to_lowercase()
}

/// Normalized tokens that mark a feature as non-conceptual.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stoplist {
    tokens: BTreeSet<String>,
}

impl Default for Stoplist {
    /// ASCII and common typographic punctuation, the ten digits, and the
    /// empty string (what whitespace-only tokens normalize to).
    fn default() -> Self {
        let mut tokens: BTreeSet<String> = BTreeSet::new();
        tokens.insert(String::new());
        for c in "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~".chars() {
            tokens.insert(c.to_string());
        }
        for c in ['\u{2018}', '\u{2019}', '\u{201c}', '\u{201d}', '\u{2013}', '\u{2014}', '\u{2026}', '\u{b7}'] {
            tokens.insert(c.to_string());
        }
        for multi in ["...", "..", "--", "---", "``", "''", "\"\"", "()", "[]", "{}", "->", "=>", "::", ".,", ",\"", ".\""] {
            tokens.insert(multi.to_string());
        }
        for d in 0..10 {
            tokens.insert(d.to_string());
        }
        Self { tokens }
    }
}

impl Stoplist {
    pub fn empty() -> Self {
        Self {
            tokens: BTreeSet::new(),
        }
    }

    /// Adds tokens, normalized the same way as feature tokens.
    pub fn extend<'a>(&mut self, tokens: impl IntoIterator<Item = &'a str>) {
        self.tokens.extend(tokens.into_iter().map(normalize_token));
    }

    /// Parses a newline-delimited stoplist; `#` starts a comment line.
    pub fn extend_from_text(&mut self, text: &str) {
        self.extend(text.lines().filter(|l| !l.trim_start().starts_with('#')));
    }

    pub fn contains(&self, normalized: &str) -> bool {
        self.tokens.contains(normalized)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Whether a single normalized token carries conceptual content.
pub fn is_concept_token(normalized: &str, stoplist: &Stoplist, alpha_required: bool) -> bool {
    !stoplist.contains(normalized) && (!alpha_required || normalized.chars().any(char::is_alphabetic))
}

/// Indices of features with at least one firing top token that passes
/// [`is_concept_token`]. Features that never fire are dropped.
pub fn filter_features(stats: &[FeatureStats], stoplist: &Stoplist, alpha_required: bool) -> Vec<usize> {
    stats
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            s.active_top_tokens()
                .any(|t| is_concept_token(&normalize_token(t), stoplist, alpha_required))
        })
        .map(|(i, _)| i)
        .collect()
}
