//! Out-of-core passes over AXT activation files.
//!
//! Every pass reads row blocks in order. Work inside a block is split
//! across threads, but each output value is accumulated in the same order
//! regardless of the split, so results do not depend on the thread count.

use std::path::Path;

use featalign_core::baseline::RunExecutor;
use featalign_core::correlate::{tile_width, CorrStats, Metric, ScoreMatrix};
use featalign_core::sae::{encode, FeatureStatsAccumulator};
use featalign_core::{FeatureStats, Matrix, SaeWeights};
use rayon::prelude::*;

use crate::axt::{AxtReader, AxtWriter, Dtype};
use crate::error::{Error, Result};

/// Default memory budget for one correlation pass.
pub const DEFAULT_BUDGET_BYTES: usize = 1 << 30;

// Rows per parallel work item inside a block.
const CHUNK_ROWS: usize = 256;

/// Null runs on the rayon pool, results in run order.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayonExecutor;

impl RunExecutor for RayonExecutor {
    fn run_all(
        &self,
        n: usize,
        run: &(dyn Fn(usize) -> featalign_core::Result<f64> + Sync),
    ) -> featalign_core::Result<Vec<f64>> {
        (0..n).into_par_iter().map(run).collect()
    }
}

/// Encodes a residual tensor block by block into a new feature tensor.
pub fn encode_file(
    residuals: &AxtReader,
    weights: &SaeWeights,
    out: impl AsRef<Path>,
    block_rows: usize,
    dtype: Dtype,
) -> Result<()> {
    let mut w = AxtWriter::create(out, dtype, residuals.rows(), weights.n_features())?;
    for block in residuals.blocks(block_rows)? {
        let (_, m) = block?;
        let starts: Vec<usize> = (0..m.rows()).step_by(CHUNK_ROWS).collect();
        let parts = starts
            .par_iter()
            .map(|&s| encode(&m.row_block(s, (s + CHUNK_ROWS).min(m.rows())), weights))
            .collect::<featalign_core::Result<Vec<Matrix>>>()?;
        for p in &parts {
            w.write_rows(p)?;
        }
    }
    w.finish()
}

/// Top-`k` token statistics of every feature column.
pub fn feature_stats_file(acts: &AxtReader, tokens: &[String], k: usize, block_rows: usize) -> Result<Vec<FeatureStats>> {
    let h = acts.cols();
    let mut total = FeatureStatsAccumulator::new(h, k)?;
    for block in acts.blocks(block_rows)? {
        let (offset, m) = block?;
        let starts: Vec<usize> = (0..m.rows()).step_by(CHUNK_ROWS).collect();
        let parts = starts
            .par_iter()
            .map(|&s| {
                let mut acc = FeatureStatsAccumulator::new(h, k)?;
                acc.update(offset + s, &m.row_block(s, (s + CHUNK_ROWS).min(m.rows())))?;
                Ok(acc)
            })
            .collect::<featalign_core::Result<Vec<_>>>()?;
        for p in &parts {
            total.merge(p)?;
        }
    }
    Ok(total.finish(tokens)?)
}

/// Repeats row `offset + r` of `block` `counts[offset + r]` times.
pub fn expand_rows(block: &Matrix, offset: usize, counts: &[u32]) -> Matrix {
    let mut idx = Vec::with_capacity(block.rows());
    for r in 0..block.rows() {
        idx.extend(std::iter::repeat_n(r, counts[offset + r] as usize));
    }
    block.select_rows(&idx)
}

/// Bootstrap multiplicities: `n` draws with replacement from `0..n`.
pub fn bootstrap_counts(n: usize, seed: u64) -> Vec<u32> {
    use rand::Rng;
    // stream ids below 2^32 are left to the null runs
    let mut rng = featalign_core::rng::stream(seed, 1 << 40);
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts
}

/// Streaming similarity matrix between two activation files.
///
/// Targets are tiled so that one pass holds at most `budget_bytes` of
/// cross-product sums; each pass rereads both files. `row_weights` are
/// per-token multiplicities (bootstrap resampling).
pub fn correlate_files(
    a: &AxtReader,
    b: &AxtReader,
    metric: Metric,
    block_rows: usize,
    budget_bytes: usize,
    row_weights: Option<&[u32]>,
) -> Result<ScoreMatrix> {
    if a.rows() != b.rows() {
        return Err(featalign_core::Error::DimensionMismatch {
            context: "token count of activation files",
            expected: a.rows(),
            actual: b.rows(),
        }
        .into());
    }
    if let Some(w) = row_weights {
        if w.len() != a.rows() {
            return Err(Error::Config(format!("{} row weights for {} tokens", w.len(), a.rows())));
        }
    }
    let (hs, ht) = (a.cols(), b.cols());
    let pass_width = tile_width(hs, ht, budget_bytes);
    let threads = rayon::current_num_threads().max(1);
    let mut tiles: Vec<ScoreMatrix> = Vec::new();
    let mut pass_start = 0;
    while pass_start < ht.max(1) {
        let pass_end = (pass_start + pass_width).min(ht);
        let sub = (pass_end - pass_start).div_ceil(threads).max(1);
        let mut stats: Vec<CorrStats> = (pass_start..pass_end)
            .step_by(sub)
            .map(|s| CorrStats::with_targets(hs, s..(s + sub).min(pass_end)))
            .collect();
        if stats.is_empty() {
            stats.push(CorrStats::with_targets(hs, 0..0));
        }
        for pair in a.blocks(block_rows)?.zip(b.blocks(block_rows)?) {
            let ((off, ba), (_, bb)) = (pair.0?, pair.1?);
            let (ba, bb) = match row_weights {
                Some(w) => (expand_rows(&ba, off, w), expand_rows(&bb, off, w)),
                None => (ba, bb),
            };
            stats
                .par_iter_mut()
                .try_for_each(|s| s.update(&ba, &bb))?;
        }
        tiles.extend(stats.iter().map(|s| s.finish(metric)));
        pass_start = pass_end;
        if ht == 0 {
            break;
        }
    }
    Ok(ScoreMatrix::from_tiles(tiles)?)
}
