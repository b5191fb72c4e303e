//! Semantic subspaces: named keyword sets, their composition, and the
//! restriction of a feature dictionary to features whose top tokens hit a
//! keyword.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::{Bound, Range};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::normalize_token;
use crate::matrix::Matrix;
use crate::sae::FeatureStats;

/// A token shorter than this never matches a keyword by prefix.
pub const MIN_PREFIX_CHARS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspaceSpec {
    pub name: String,
    /// Lowercase, trimmed, non-empty.
    pub keywords: BTreeSet<String>,
    /// Free-form provenance notes.
    pub sources: Vec<String>,
}

impl SubspaceSpec {
    pub fn new<'a>(name: &str, keywords: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let keywords: BTreeSet<String> = keywords
            .into_iter()
            .map(|k| k.trim().to_lowercase())
            .filter(|k| !k.is_empty())
            .collect();
        if keywords.is_empty() {
            return Err(Error::Empty("subspace keyword list"));
        }
        Ok(Self {
            name: name.to_string(),
            keywords,
            sources: Vec::new(),
        })
    }

    pub fn with_source(mut self, note: &str) -> Self {
        self.sources.push(note.to_string());
        self
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }
}

/// Parses a keyword file: one keyword per line, `#` starts a comment line.
pub fn parse_keywords(name: &str, text: &str) -> Result<SubspaceSpec> {
    SubspaceSpec::new(name, text.lines().filter(|l| !l.trim_start().starts_with('#')))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    OverlapUnion,
    MultiTokenConcat,
}

impl Composition {
    pub fn as_str(self) -> &'static str {
        match self {
            Composition::OverlapUnion => "overlap_union",
            Composition::MultiTokenConcat => "multi_token_concat",
        }
    }
}

impl core::str::FromStr for Composition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overlap_union" | "union" => Ok(Composition::OverlapUnion),
            "multi_token_concat" | "concat" => Ok(Composition::MultiTokenConcat),
            other => Err(Error::InvalidParameter(alloc::format!("unknown composition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedSubspace {
    pub kind: Composition,
    pub parents: [SubspaceSpec; 2],
    /// Union: sorted keyword set. Concat: phrases `"a b"` in lexicographic
    /// order of `(a, b)`, possibly truncated.
    pub items: Vec<String>,
}

impl ComposedSubspace {
    pub fn name(&self) -> String {
        let sep = match self.kind {
            Composition::OverlapUnion => "+",
            Composition::MultiTokenConcat => "x",
        };
        alloc::format!("{}{sep}{}", self.parents[0].name, self.parents[1].name)
    }
}

/// Composes two subspaces. `cap` truncates concatenations only; the union
/// is always complete.
pub fn compose(a: &SubspaceSpec, b: &SubspaceSpec, kind: Composition, cap: Option<usize>) -> Result<ComposedSubspace> {
    if cap == Some(0) {
        return Err(Error::InvalidParameter("composition cap must be at least 1".into()));
    }
    let items = match kind {
        Composition::OverlapUnion => a.keywords.union(&b.keywords).cloned().collect(),
        Composition::MultiTokenConcat => {
            let limit = cap.unwrap_or(usize::MAX);
            a.keywords
                .iter()
                .flat_map(|ka| b.keywords.iter().map(move |kb| alloc::format!("{ka} {kb}")))
                .take(limit)
                .collect()
        }
    };
    Ok(ComposedSubspace {
        kind,
        parents: [a.clone(), b.clone()],
        items,
    })
}

/// Token-to-keyword matcher.
///
/// A normalized token hits a word when it equals the word or is a prefix of
/// it at least [`MIN_PREFIX_CHARS`] characters long. A token equal to a
/// whole phrase also hits.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeywordIndex {
    words: BTreeSet<String>,
    phrases: BTreeSet<String>,
}

impl KeywordIndex {
    pub fn matches(&self, normalized: &str) -> bool {
        if normalized.is_empty() {
            return false;
        }
        if self.words.contains(normalized) || self.phrases.contains(normalized) {
            return true;
        }
        normalized.chars().count() >= MIN_PREFIX_CHARS
            && self
                .words
                .range::<str, _>((Bound::Included(normalized), Bound::Unbounded))
                .next()
                .is_some_and(|w| w.starts_with(normalized))
    }

    pub fn words(&self) -> &BTreeSet<String> {
        &self.words
    }
}

impl From<&SubspaceSpec> for KeywordIndex {
    fn from(spec: &SubspaceSpec) -> Self {
        Self {
            words: spec.keywords.clone(),
            phrases: BTreeSet::new(),
        }
    }
}

impl From<&ComposedSubspace> for KeywordIndex {
    fn from(c: &ComposedSubspace) -> Self {
        match c.kind {
            Composition::OverlapUnion => Self {
                words: c.items.iter().cloned().collect(),
                phrases: BTreeSet::new(),
            },
            Composition::MultiTokenConcat => Self {
                words: c
                    .items
                    .iter()
                    .flat_map(|p| p.split(' '))
                    .map(String::from)
                    .collect(),
                phrases: c.items.iter().cloned().collect(),
            },
        }
    }
}

/// Features for which any of the first `k` firing top tokens hits the index.
pub fn restrict_features(stats: &[FeatureStats], index: &KeywordIndex, k: usize) -> Vec<usize> {
    stats
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            s.active_top_tokens()
                .take(k)
                .any(|t| index.matches(&normalize_token(t)))
        })
        .map(|(i, _)| i)
        .collect()
}

/// How a multi-token phrase is reduced to one activation row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Row of the phrase's last token.
    #[default]
    FinalToken,
    Mean,
}

/// One row per phrase span (half-open token ranges into `acts`).
pub fn pool_phrase_rows(acts: &Matrix, spans: &[Range<usize>], pooling: Pooling) -> Result<Matrix> {
    let mut out = Matrix::zeros(spans.len(), acts.cols());
    for (r, span) in spans.iter().enumerate() {
        if span.is_empty() || span.end > acts.rows() {
            return Err(Error::InvalidParameter(alloc::format!(
                "phrase span {}..{} outside 0..{}",
                span.start,
                span.end,
                acts.rows()
            )));
        }
        match pooling {
            Pooling::FinalToken => out.row_mut(r).copy_from_slice(acts.row(span.end - 1)),
            Pooling::Mean => {
                let w = 1.0 / span.len() as f64;
                let dst = out.row_mut(r);
                for t in span.clone() {
                    for (d, &v) in dst.iter_mut().zip(acts.row(t)) {
                        *d += v * w;
                    }
                }
            }
        }
    }
    Ok(out)
}
