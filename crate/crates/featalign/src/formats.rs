//! Result files: match lists (JSON and compact binary), score records,
//! cached score matrices.

use std::fs;
use std::io::Write;
use std::path::Path;

use featalign_core::correlate::ScoreMatrix;
use featalign_core::matching::{MatchResult, MatchStrategy, MatchedPair};
use featalign_core::pipeline::SpaceMode;
use featalign_core::{Matrix, Metric};
use serde::{Deserialize, Serialize};

use crate::axt::{read_tensor, write_tensor, Dtype};
use crate::error::{format_err, IoContext, Result};
use crate::manifest::{read_json, write_json};

pub const PAIR_MAGIC: &[u8; 4] = b"AXM1";

fn strategy_code(s: MatchStrategy) -> u8 {
    match s {
        MatchStrategy::OneToOne => 0,
        MatchStrategy::ManyToOne => 1,
    }
}

fn metric_code(m: Metric) -> u8 {
    match m {
        Metric::Pearson => 0,
        Metric::Cosine => 1,
        Metric::Euclidean => 2,
    }
}

/// Binary pair file:
///
/// ```text
/// "AXM1" | u8 strategy | u8 metric | u16 reserved (0) | u64 LE count
///        | count × (u32 LE src, u32 LE tgt, f32 LE score)
/// ```
///
/// Strategy codes: 0 one-to-one, 1 many-to-one. Metric codes: 0 Pearson,
/// 1 cosine, 2 Euclidean. Scores are narrowed to `f32`.
pub fn encode_pairs(m: &MatchResult) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 12 * m.pairs.len());
    out.extend_from_slice(PAIR_MAGIC);
    out.push(strategy_code(m.strategy));
    out.push(metric_code(m.metric));
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(m.pairs.len() as u64).to_le_bytes());
    for p in &m.pairs {
        out.extend_from_slice(&(p.src as u32).to_le_bytes());
        out.extend_from_slice(&(p.tgt as u32).to_le_bytes());
        out.extend_from_slice(&(p.score as f32).to_le_bytes());
    }
    out
}

pub fn decode_pairs(bytes: &[u8], path: &Path) -> Result<MatchResult> {
    let bad = |msg: &str| format_err(path, msg.to_string());
    if bytes.len() < 16 || &bytes[..4] != PAIR_MAGIC {
        return Err(bad("not an AXM1 pair file"));
    }
    let strategy = match bytes[4] {
        0 => MatchStrategy::OneToOne,
        1 => MatchStrategy::ManyToOne,
        _ => return Err(bad("unknown strategy code")),
    };
    let metric = match bytes[5] {
        0 => Metric::Pearson,
        1 => Metric::Cosine,
        2 => Metric::Euclidean,
        _ => return Err(bad("unknown metric code")),
    };
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != count * 12 {
        return Err(bad("pair count does not match file length"));
    }
    let pairs = body
        .chunks_exact(12)
        .map(|c| MatchedPair {
            src: u32::from_le_bytes(c[0..4].try_into().unwrap()) as usize,
            tgt: u32::from_le_bytes(c[4..8].try_into().unwrap()) as usize,
            score: f32::from_le_bytes(c[8..12].try_into().unwrap()) as f64,
        })
        .collect();
    Ok(MatchResult {
        strategy,
        metric,
        pairs,
    })
}

pub fn write_pairs(path: impl AsRef<Path>, m: &MatchResult) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).at(path)?;
    f.write_all(&encode_pairs(m)).at(path)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<MatchResult> {
    let path = path.as_ref();
    decode_pairs(&fs::read(path).at(path)?, path)
}

/// Reads a match list from JSON or, for `.axm` files, the binary format.
pub fn read_match(path: impl AsRef<Path>) -> Result<MatchResult> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "axm") {
        read_pairs(path)
    } else {
        read_json(path)
    }
}

/// One similarity score of one layer pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScoreRecord {
    pub layer_a: u32,
    pub layer_b: u32,
    /// `svcca` or `rsa`.
    pub metric: String,
    pub mode: SpaceMode,
    pub score: f64,
}

#[derive(Serialize, Deserialize)]
struct ScoreMatrixMeta {
    metric: Metric,
    degenerate_src: Vec<bool>,
    degenerate_tgt: Vec<bool>,
}

/// Stores a score matrix as `<stem>.axt` (f64) plus `<stem>.json`.
pub fn write_score_matrix(stem: &Path, s: &ScoreMatrix) -> Result<()> {
    write_tensor(stem.with_extension("axt"), &s.scores, Dtype::F64)?;
    write_json(
        stem.with_extension("json"),
        &ScoreMatrixMeta {
            metric: s.metric,
            degenerate_src: s.degenerate_src.clone(),
            degenerate_tgt: s.degenerate_tgt.clone(),
        },
    )
}

pub fn read_score_matrix(stem: &Path) -> Result<ScoreMatrix> {
    let scores: Matrix = read_tensor(stem.with_extension("axt"))?;
    let meta: ScoreMatrixMeta = read_json(stem.with_extension("json"))?;
    if meta.degenerate_src.len() != scores.rows() || meta.degenerate_tgt.len() != scores.cols() {
        return Err(format_err(stem, "score matrix flags do not match its shape"));
    }
    Ok(ScoreMatrix {
        metric: meta.metric,
        scores,
        degenerate_src: meta.degenerate_src,
        degenerate_tgt: meta.degenerate_tgt,
    })
}
