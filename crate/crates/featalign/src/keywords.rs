//! Keyword lists shipped with the crate, and resolution of keyword sources.
//!
//! The bundled lists are hand-written reconstructions of each concept, not
//! lists used in any published experiment.

use std::path::Path;

use featalign_core::subspace::{parse_keywords, SubspaceSpec};

use crate::error::{Error, IoContext, Result};

pub const BUNDLED: &[(&str, &str)] = &[
    ("calendar", include_str!("../keywords/calendar.txt")),
    ("country", include_str!("../keywords/country.txt")),
    ("emotions", include_str!("../keywords/emotions.txt")),
    ("nature", include_str!("../keywords/nature.txt")),
    ("people", include_str!("../keywords/people.txt")),
    ("time", include_str!("../keywords/time.txt")),
];

/// Prefix selecting a bundled list instead of a file.
pub const BUNDLED_PREFIX: &str = "bundled:";

pub fn bundled(name: &str) -> Option<SubspaceSpec> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(n, text)| {
        parse_keywords(n, text)
            .expect("bundled lists are non-empty")
            .with_source("bundled reconstruction")
    })
}

/// Loads `bundled:<name>` or a keyword file, resolving relative paths
/// against `base`.
pub fn load_subspace(source: &str, base: &Path) -> Result<SubspaceSpec> {
    if let Some(name) = source.strip_prefix(BUNDLED_PREFIX) {
        return bundled(name).ok_or_else(|| {
            let known: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("no bundled keyword list `{name}` (have {})", known.join(", ")))
        });
    }
    let path = base.join(source);
    let text = std::fs::read_to_string(&path).at(&path)?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or(source);
    Ok(parse_keywords(name, &text)?.with_source(&format!("file {}", path.display())))
}
