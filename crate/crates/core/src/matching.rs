//! Greedy feature matching on a score matrix.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use serde::{Deserialize, Serialize};

use crate::correlate::Metric;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Greedy bijection by descending score.
    #[default]
    OneToOne,
    /// Row-wise argmax; targets may be claimed repeatedly.
    ManyToOne,
}

impl MatchStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchStrategy::OneToOne => "one_to_one",
            MatchStrategy::ManyToOne => "many_to_one",
        }
    }
}

impl core::str::FromStr for MatchStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_to_one" | "1-to-1" => Ok(MatchStrategy::OneToOne),
            "many_to_one" | "many-to-1" => Ok(MatchStrategy::ManyToOne),
            other => Err(Error::InvalidParameter(alloc::format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub src: usize,
    pub tgt: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub strategy: MatchStrategy,
    pub metric: Metric,
    pub pairs: Vec<MatchedPair>,
}

impl MatchResult {
    pub fn sources(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.src).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.tgt).collect()
    }

    pub fn mean_score(&self) -> Option<f64> {
        if self.pairs.is_empty() {
            None
        } else {
            Some(self.pairs.iter().map(|p| p.score).sum::<f64>() / self.pairs.len() as f64)
        }
    }

    /// Keeps only pairs accepted by `keep`, preserving order.
    pub fn retain(&self, mut keep: impl FnMut(&MatchedPair) -> bool) -> MatchResult {
        MatchResult {
            strategy: self.strategy,
            metric: self.metric,
            pairs: self.pairs.iter().copied().filter(|p| keep(p)).collect(),
        }
    }
}

fn check(scores: &Matrix) -> Result<()> {
    if scores.rows() == 0 || scores.cols() == 0 {
        return Err(Error::Empty("score matrix"));
    }
    if !scores.all_finite() {
        return Err(Error::NonFinite("score matrix"));
    }
    Ok(())
}

// Heap entry ordered so that the greatest element is the next greedy pick:
// higher score, then lower source, then lower target.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    src: usize,
    tgt: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.src.cmp(&self.src))
            .then_with(|| other.tgt.cmp(&self.tgt))
    }
}

/// Greedy bijection: repeatedly takes the best still-unmatched pair.
/// Ties go to the lower source index, then the lower target index. Pairs
/// are returned in selection order; there are `min(rows, cols)` of them.
pub fn match_one_to_one(scores: &Matrix) -> Result<Vec<MatchedPair>> {
    check(scores)?;
    let (hs, ht) = scores.shape();
    let k = hs.min(ht);

    // Each source walks its own target list from best to worst; the heap
    // holds one candidate per unmatched source.
    let order: Vec<Vec<u32>> = (0..hs)
        .map(|i| {
            let row = scores.row(i);
            let mut idx: Vec<u32> = (0..ht as u32).collect();
            idx.sort_unstable_by(|&a, &b| {
                row[b as usize]
                    .total_cmp(&row[a as usize])
                    .then_with(|| a.cmp(&b))
            });
            idx
        })
        .collect();
    let mut cursor = vec![0usize; hs];
    let mut tgt_taken = vec![false; ht];
    let mut heap: BinaryHeap<Candidate> = (0..hs)
        .map(|i| {
            let j = order[i][0] as usize;
            Candidate {
                score: scores.get(i, j),
                src: i,
                tgt: j,
            }
        })
        .collect();

    let mut pairs = Vec::with_capacity(k);
    while pairs.len() < k {
        let Some(c) = heap.pop() else { break };
        if !tgt_taken[c.tgt] {
            tgt_taken[c.tgt] = true;
            pairs.push(MatchedPair {
                src: c.src,
                tgt: c.tgt,
                score: c.score,
            });
            continue;
        }
        // stale: advance this source to its best free target
        let i = c.src;
        let list = &order[i];
        while cursor[i] < ht && tgt_taken[list[cursor[i]] as usize] {
            cursor[i] += 1;
        }
        if cursor[i] < ht {
            let j = list[cursor[i]] as usize;
            heap.push(Candidate {
                score: scores.get(i, j),
                src: i,
                tgt: j,
            });
        }
    }
    Ok(pairs)
}

/// Every source paired with its row argmax (ties to the lower target).
pub fn match_many_to_one(scores: &Matrix) -> Result<Vec<MatchedPair>> {
    check(scores)?;
    Ok((0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            let mut best = 0;
            for (j, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = j;
                }
            }
            MatchedPair {
                src: i,
                tgt: best,
                score: row[best],
            }
        })
        .collect())
}

pub fn match_features(scores: &Matrix, strategy: MatchStrategy) -> Result<Vec<MatchedPair>> {
    match strategy {
        MatchStrategy::OneToOne => match_one_to_one(scores),
        MatchStrategy::ManyToOne => match_many_to_one(scores),
    }
}

/// Matches only the given sources and targets, reporting original indices.
pub fn match_subset(
    scores: &Matrix,
    sources: &[usize],
    targets: &[usize],
    strategy: MatchStrategy,
) -> Result<Vec<MatchedPair>> {
    let sub = scores.select_rows(sources).select_cols(targets);
    let pairs = match_features(&sub, strategy)?;
    Ok(pairs
        .into_iter()
        .map(|p| MatchedPair {
            src: sources[p.src],
            tgt: targets[p.tgt],
            score: p.score,
        })
        .collect())
}
