//! Feature-by-feature similarity between two activation tensors over a
//! shared token corpus, accumulated block by block.
//!
//! [`CorrStats`] holds the sufficient statistics `n, Σx, Σy, Σx², Σy², Σxy`
//! for every (source, target) pair of a target tile. Partial statistics over
//! disjoint token ranges merge by addition, so corpora can be streamed in
//! row blocks and large target dictionaries can be processed tile by tile.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::matrix::Matrix;

/// Pairwise similarity used to compare feature activation columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Pearson,
    Cosine,
    /// Negative Euclidean distance between z-scored columns.
    Euclidean,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Pearson => "pearson",
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        }
    }
}

impl core::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(Metric::Pearson),
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::InvalidParameter(alloc::format!("unknown metric `{other}`"))),
        }
    }
}

// Variance (or squared norm) below this fraction of Σx² counts as zero.
const DEGENERATE_REL: f64 = 1e-12;

/// Sufficient statistics for all pairs `source × targets`.
///
/// Sums are taken over values shifted by a per-column constant (the
/// column's first observed value), which keeps the one-pass variance and
/// covariance free of catastrophic cancellation when a column's mean is
/// large relative to its spread. A column whose shift is zero keeps the
/// exact-zero skip that makes sparse codes cheap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrStats {
    pub n: u64,
    pub n_sources: usize,
    pub targets: Range<usize>,
    pub shift_x: Vec<f64>,
    pub shift_y: Vec<f64>,
    /// `Σ(x − shift_x)`.
    pub sum_x: Vec<f64>,
    pub sum_y: Vec<f64>,
    /// `Σ(x − shift_x)²`.
    pub sumsq_x: Vec<f64>,
    pub sumsq_y: Vec<f64>,
    /// `Σ(x − shift_x)(y − shift_y)`, row-major `n_sources × targets.len()`.
    pub sum_xy: Vec<f64>,
}

impl CorrStats {
    /// Statistics for every source against every target.
    pub fn new(n_sources: usize, n_targets: usize) -> Self {
        Self::with_targets(n_sources, 0..n_targets)
    }

    /// Statistics restricted to the target tile `targets`.
    pub fn with_targets(n_sources: usize, targets: Range<usize>) -> Self {
        let t = targets.len();
        Self {
            n: 0,
            n_sources,
            targets,
            shift_x: vec![0.0; n_sources],
            shift_y: vec![0.0; t],
            sum_x: vec![0.0; n_sources],
            sum_y: vec![0.0; t],
            sumsq_x: vec![0.0; n_sources],
            sumsq_y: vec![0.0; t],
            sum_xy: vec![0.0; n_sources * t],
        }
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    /// Folds in one token block. `block_b` carries all target features; only
    /// the tile's columns are read.
    pub fn update(&mut self, block_a: &Matrix, block_b: &Matrix) -> Result<()> {
        if block_a.rows() != block_b.rows() {
            return Err(Error::DimensionMismatch {
                context: "token count of paired blocks",
                expected: block_a.rows(),
                actual: block_b.rows(),
            });
        }
        if block_a.cols() != self.n_sources {
            return Err(Error::DimensionMismatch {
                context: "source feature count",
                expected: self.n_sources,
                actual: block_a.cols(),
            });
        }
        if block_b.cols() < self.targets.end {
            return Err(Error::DimensionMismatch {
                context: "target feature count",
                expected: self.targets.end,
                actual: block_b.cols(),
            });
        }
        if block_a.rows() == 0 {
            return Ok(());
        }
        if self.n == 0 {
            self.shift_x.copy_from_slice(block_a.row(0));
            self.shift_y.copy_from_slice(&block_b.row(0)[self.targets.clone()]);
        }
        let t = self.targets.len();
        let mut dys = vec![0.0; t];
        for r in 0..block_a.rows() {
            let xs = block_a.row(r);
            let ys = &block_b.row(r)[self.targets.clone()];
            for ((d, &y), &k) in dys.iter_mut().zip(ys).zip(&self.shift_y) {
                *d = y - k;
            }
            for (i, &x) in xs.iter().enumerate() {
                let dx = x - self.shift_x[i];
                if dx == 0.0 {
                    // SAE codes are mostly exact zeros
                    continue;
                }
                self.sum_x[i] += dx;
                self.sumsq_x[i] += dx * dx;
                let acc = &mut self.sum_xy[i * t..(i + 1) * t];
                for (a, &dy) in acc.iter_mut().zip(&dys) {
                    *a += dx * dy;
                }
            }
            for (j, &dy) in dys.iter().enumerate() {
                self.sum_y[j] += dy;
                self.sumsq_y[j] += dy * dy;
            }
        }
        self.n += block_a.rows() as u64;
        Ok(())
    }

    /// Re-expresses the sums about new shifts.
    fn reshift(&mut self, shift_x: &[f64], shift_y: &[f64]) {
        let n = self.n as f64;
        let dx: Vec<f64> = self.shift_x.iter().zip(shift_x).map(|(old, new)| old - new).collect();
        let dy: Vec<f64> = self.shift_y.iter().zip(shift_y).map(|(old, new)| old - new).collect();
        let t = self.targets.len();
        for i in 0..self.n_sources {
            for j in 0..t {
                self.sum_xy[i * t + j] += dy[j] * self.sum_x[i] + dx[i] * self.sum_y[j] + n * dx[i] * dy[j];
            }
        }
        for (k, d) in dx.iter().enumerate() {
            self.sumsq_x[k] += 2.0 * d * self.sum_x[k] + n * d * d;
            self.sum_x[k] += n * d;
        }
        for (k, d) in dy.iter().enumerate() {
            self.sumsq_y[k] += 2.0 * d * self.sum_y[k] + n * d * d;
            self.sum_y[k] += n * d;
        }
        self.shift_x.copy_from_slice(shift_x);
        self.shift_y.copy_from_slice(shift_y);
    }

    /// Adds statistics gathered over a disjoint token range.
    pub fn merge(&mut self, other: &CorrStats) -> Result<()> {
        if other.n_sources != self.n_sources || other.targets != self.targets {
            return Err(Error::DimensionMismatch {
                context: "merging statistics of different tiles",
                expected: self.sum_xy.len(),
                actual: other.sum_xy.len(),
            });
        }
        if other.n == 0 {
            return Ok(());
        }
        if self.n == 0 {
            *self = other.clone();
            return Ok(());
        }
        let mut other = other.clone();
        other.reshift(&self.shift_x, &self.shift_y);
        self.n += other.n;
        add_into(&mut self.sum_x, &other.sum_x);
        add_into(&mut self.sum_y, &other.sum_y);
        add_into(&mut self.sumsq_x, &other.sumsq_x);
        add_into(&mut self.sumsq_y, &other.sumsq_y);
        add_into(&mut self.sum_xy, &other.sum_xy);
        Ok(())
    }

    fn centered(sum: &[f64], sumsq: &[f64], n: f64) -> Vec<f64> {
        sum.iter().zip(sumsq).map(|(s, ss)| (ss - s * s / n).max(0.0)).collect()
    }

    // Unshifted Σx² from shifted sums.
    fn raw_sumsq(sum: &[f64], sumsq: &[f64], shift: &[f64], n: f64) -> Vec<f64> {
        sum.iter()
            .zip(sumsq)
            .zip(shift)
            .map(|((s, ss), k)| ss + 2.0 * k * s + n * k * k)
            .collect()
    }

    /// Converts the statistics into a score tile under `metric`.
    pub fn finish(&self, metric: Metric) -> ScoreMatrix {
        let hs = self.n_sources;
        let ht = self.targets.len();
        let n = self.n as f64;
        let mut scores = Matrix::zeros(hs, ht);
        let raw_x = Self::raw_sumsq(&self.sum_x, &self.sumsq_x, &self.shift_x, n);
        let raw_y = Self::raw_sumsq(&self.sum_y, &self.sumsq_y, &self.shift_y, n);
        let (deg_x, deg_y): (Vec<bool>, Vec<bool>);
        match metric {
            Metric::Pearson | Metric::Euclidean => {
                let vx = Self::centered(&self.sum_x, &self.sumsq_x, n);
                let vy = Self::centered(&self.sum_y, &self.sumsq_y, n);
                deg_x = vx
                    .iter()
                    .zip(&raw_x)
                    .map(|(&v, &ss)| self.n < 2 || v <= DEGENERATE_REL * ss)
                    .collect();
                deg_y = vy
                    .iter()
                    .zip(&raw_y)
                    .map(|(&v, &ss)| self.n < 2 || v <= DEGENERATE_REL * ss)
                    .collect();
                for i in 0..hs {
                    for j in 0..ht {
                        let r = if deg_x[i] || deg_y[j] {
                            0.0
                        } else {
                            let cov = self.sum_xy[i * ht + j] - self.sum_x[i] * self.sum_y[j] / n;
                            (cov / sqrt(vx[i] * vy[j])).clamp(-1.0, 1.0)
                        };
                        let s = match metric {
                            Metric::Pearson => r,
                            // ‖zx − zy‖² = 2n(1 − r) for population z-scores
                            _ => -sqrt((2.0 * n * (1.0 - r)).max(0.0)),
                        };
                        scores.set(i, j, s);
                    }
                }
            }
            Metric::Cosine => {
                deg_x = raw_x.iter().map(|&ss| ss <= 0.0).collect();
                deg_y = raw_y.iter().map(|&ss| ss <= 0.0).collect();
                for i in 0..hs {
                    for j in 0..ht {
                        let s = if deg_x[i] || deg_y[j] {
                            0.0
                        } else {
                            let (kx, ky) = (self.shift_x[i], self.shift_y[j]);
                            let raw_xy = self.sum_xy[i * ht + j]
                                + ky * self.sum_x[i]
                                + kx * self.sum_y[j]
                                + n * kx * ky;
                            (raw_xy / sqrt(raw_x[i] * raw_y[j])).clamp(-1.0, 1.0)
                        };
                        scores.set(i, j, s);
                    }
                }
            }
        }
        ScoreMatrix {
            metric,
            scores,
            degenerate_src: deg_x,
            degenerate_tgt: deg_y,
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `hA × hB` similarity scores, with features whose variance (or norm)
/// vanished flagged; their scores are fixed at the metric's neutral value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub metric: Metric,
    pub scores: Matrix,
    pub degenerate_src: Vec<bool>,
    pub degenerate_tgt: Vec<bool>,
}

impl ScoreMatrix {
    /// Places target tiles side by side; tiles must be in target order.
    pub fn from_tiles(tiles: Vec<ScoreMatrix>) -> Result<Self> {
        let first = tiles.first().ok_or(Error::Empty("score tiles"))?;
        let metric = first.metric;
        let hs = first.scores.rows();
        let degenerate_src = first.degenerate_src.clone();
        let ht: usize = tiles.iter().map(|t| t.scores.cols()).sum();
        let mut scores = Matrix::zeros(hs, ht);
        let mut degenerate_tgt = Vec::with_capacity(ht);
        let mut off = 0;
        for t in &tiles {
            if t.scores.rows() != hs || t.metric != metric {
                return Err(Error::DimensionMismatch {
                    context: "score tile rows",
                    expected: hs,
                    actual: t.scores.rows(),
                });
            }
            for i in 0..hs {
                scores.row_mut(i)[off..off + t.scores.cols()].copy_from_slice(t.scores.row(i));
            }
            degenerate_tgt.extend_from_slice(&t.degenerate_tgt);
            off += t.scores.cols();
        }
        Ok(Self {
            metric,
            scores,
            degenerate_src,
            degenerate_tgt,
        })
    }

    /// Source indices with non-degenerate activations.
    pub fn live_sources(&self) -> Vec<usize> {
        (0..self.degenerate_src.len())
            .filter(|&i| !self.degenerate_src[i])
            .collect()
    }

    pub fn live_targets(&self) -> Vec<usize> {
        (0..self.degenerate_tgt.len())
            .filter(|&j| !self.degenerate_tgt[j])
            .collect()
    }
}

/// Default number of token rows folded per accumulation step.
pub const DEFAULT_BLOCK_ROWS: usize = 4096;

/// Full `hA × hB` score matrix of two in-memory activation tensors.
pub fn correlation_matrix(acts_a: &Matrix, acts_b: &Matrix, metric: Metric) -> Result<ScoreMatrix> {
    correlation_matrix_blocked(acts_a, acts_b, metric, DEFAULT_BLOCK_ROWS)
}

pub fn correlation_matrix_blocked(
    acts_a: &Matrix,
    acts_b: &Matrix,
    metric: Metric,
    block_rows: usize,
) -> Result<ScoreMatrix> {
    if acts_a.rows() != acts_b.rows() {
        return Err(Error::DimensionMismatch {
            context: "token count of activation tensors",
            expected: acts_a.rows(),
            actual: acts_b.rows(),
        });
    }
    if block_rows == 0 {
        return Err(Error::InvalidParameter("block_rows must be at least 1".into()));
    }
    let mut stats = CorrStats::new(acts_a.cols(), acts_b.cols());
    let mut start = 0;
    while start < acts_a.rows() {
        let end = (start + block_rows).min(acts_a.rows());
        stats.update(&acts_a.row_block(start, end), &acts_b.row_block(start, end))?;
        start = end;
    }
    Ok(stats.finish(metric))
}

/// Target tile width so that one tile's `Σxy` buffer fits `budget_bytes`.
pub fn tile_width(n_sources: usize, n_targets: usize, budget_bytes: usize) -> usize {
    let per_target = n_sources.max(1) * core::mem::size_of::<f64>();
    (budget_bytes / per_target).clamp(1, n_targets.max(1))
}
