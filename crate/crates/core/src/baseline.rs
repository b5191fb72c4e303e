//! Random-pairing null distributions and p-values.
//!
//! A null run reorders the rows of `Y` with a uniform random permutation,
//! breaking the learned correspondence while keeping each side's marginal
//! structure, and recomputes the score. Run `r` draws its permutation from
//! the random stream `(seed, r)`, so runs can be evaluated in any order or
//! in parallel with identical results.

use alloc::boxed::Box;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// A similarity score that can be re-evaluated cheaply under row
/// permutations of its second argument.
pub trait PairedScore {
    type Prepared;

    fn prepare(&self, x: &Matrix, y: &Matrix) -> Result<Self::Prepared>;

    /// Score with `Y`'s row `r` replaced by original row `perm[r]`;
    /// `None` is the observed pairing.
    fn score(&self, prepared: &Self::Prepared, perm: Option<&[usize]>) -> Result<f64>;

    /// Number of paired rows.
    fn n_rows(&self, prepared: &Self::Prepared) -> usize;
}

/// Wraps any `(X, Y) -> score` function; null runs permute `Y` explicitly.
pub struct FnScore<F>(pub F);

impl<F> PairedScore for FnScore<F>
where
    F: Fn(&Matrix, &Matrix) -> Result<f64>,
{
    type Prepared = (Matrix, Matrix);

    fn prepare(&self, x: &Matrix, y: &Matrix) -> Result<Self::Prepared> {
        if x.rows() != y.rows() {
            return Err(Error::DimensionMismatch {
                context: "paired row count",
                expected: x.rows(),
                actual: y.rows(),
            });
        }
        Ok((x.clone(), y.clone()))
    }

    fn score(&self, (x, y): &Self::Prepared, perm: Option<&[usize]>) -> Result<f64> {
        match perm {
            None => (self.0)(x, y),
            Some(p) => (self.0)(x, &y.select_rows(p)),
        }
    }

    fn n_rows(&self, prepared: &Self::Prepared) -> usize {
        prepared.0.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub observed: f64,
    pub null_scores: Vec<f64>,
    pub null_mean: f64,
    /// `|{null ≥ observed}| / N`.
    pub p_value: f64,
    /// `(1 + |{null ≥ observed}|) / (1 + N)`.
    pub p_smooth: f64,
    pub n_runs: usize,
    pub seed: u64,
}

impl BaselineReport {
    pub fn from_scores(observed: f64, null_scores: Vec<f64>, seed: u64) -> Self {
        let n = null_scores.len();
        let exceed = null_scores.iter().filter(|&&s| s >= observed).count();
        let null_mean = if n == 0 {
            f64::NAN
        } else {
            null_scores.iter().sum::<f64>() / n as f64
        };
        Self {
            observed,
            null_mean,
            p_value: if n == 0 { f64::NAN } else { exceed as f64 / n as f64 },
            p_smooth: (1 + exceed) as f64 / (1 + n) as f64,
            n_runs: n,
            seed,
            null_scores,
        }
    }
}

/// Raw permutation p-value `|{null ≥ observed}| / N`.
pub fn p_value(observed: f64, null_scores: &[f64]) -> f64 {
    null_scores.iter().filter(|&&s| s >= observed).count() as f64 / null_scores.len() as f64
}

/// Permutation used by null run `run`.
pub fn null_permutation(n: usize, seed: u64, run: usize) -> Vec<usize> {
    rng::permutation(n, &mut rng::stream(seed, run as u64))
}

/// One null run against prepared inputs, with failures tagged by run index.
pub fn null_run<S: PairedScore>(scorer: &S, prepared: &S::Prepared, seed: u64, run: usize) -> Result<f64> {
    let perm = null_permutation(scorer.n_rows(prepared), seed, run);
    scorer
        .score(prepared, Some(&perm))
        .map_err(|e| Error::NullRun {
            run,
            source: Box::new(e),
        })
}

/// Evaluates indexed runs. Implementations may run them in any order or in
/// parallel but must return results in index order.
pub trait RunExecutor {
    fn run_all(&self, n: usize, run: &(dyn Fn(usize) -> Result<f64> + Sync)) -> Result<Vec<f64>>;
}

/// Runs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl RunExecutor for Sequential {
    fn run_all(&self, n: usize, run: &(dyn Fn(usize) -> Result<f64> + Sync)) -> Result<Vec<f64>> {
        (0..n).map(run).collect()
    }
}

/// Null scores for already-prepared inputs.
pub fn null_scores<S, E>(scorer: &S, prepared: &S::Prepared, n_runs: usize, seed: u64, exec: &E) -> Result<Vec<f64>>
where
    S: PairedScore + Sync,
    S::Prepared: Sync,
    E: RunExecutor + ?Sized,
{
    if n_runs < 1 {
        return Err(Error::InvalidParameter("baseline needs at least one null run".into()));
    }
    exec.run_all(n_runs, &|run| null_run(scorer, prepared, seed, run))
}

/// Observed score plus `n_runs` random-pairing scores.
pub fn random_pairing_null<S: PairedScore>(
    x: &Matrix,
    y: &Matrix,
    scorer: &S,
    n_runs: usize,
    seed: u64,
) -> Result<BaselineReport> {
    if n_runs < 1 {
        return Err(Error::InvalidParameter("baseline needs at least one null run".into()));
    }
    let prepared = scorer.prepare(x, y)?;
    let observed = scorer.score(&prepared, None)?;
    let nulls = (0..n_runs)
        .map(|run| null_run(scorer, &prepared, seed, run))
        .collect::<Result<Vec<f64>>>()?;
    Ok(BaselineReport::from_scores(observed, nulls, seed))
}

/// Layer-grid view of baseline reports: one matrix per statistic, with
/// missing cells kept as `None` and listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueGrid {
    pub observed: Vec<Vec<Option<f64>>>,
    pub null_mean: Vec<Vec<Option<f64>>>,
    pub p_value: Vec<Vec<Option<f64>>>,
    pub missing: Vec<(usize, usize)>,
}

pub fn pvalue_grid(reports: &[Vec<Option<BaselineReport>>]) -> Result<PValueGrid> {
    let cols = reports.first().map(Vec::len).ok_or(Error::Empty("report grid"))?;
    if cols == 0 {
        return Err(Error::Empty("report grid"));
    }
    let mut grid = PValueGrid {
        observed: Vec::with_capacity(reports.len()),
        null_mean: Vec::with_capacity(reports.len()),
        p_value: Vec::with_capacity(reports.len()),
        missing: Vec::new(),
    };
    for (i, row) in reports.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::DimensionMismatch {
                context: "report grid row",
                expected: cols,
                actual: row.len(),
            });
        }
        let pick = |f: fn(&BaselineReport) -> f64| row.iter().map(|c| c.as_ref().map(f)).collect::<Vec<_>>();
        grid.observed.push(pick(|r| r.observed));
        grid.null_mean.push(pick(|r| r.null_mean));
        grid.p_value.push(pick(|r| r.p_value));
        grid.missing
            .extend(row.iter().enumerate().filter(|(_, c)| c.is_none()).map(|(j, _)| (i, j)));
    }
    Ok(grid)
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `samples` and
/// the uniform distribution on `[0, 1]`.
pub fn ks_uniform(samples: &[f64]) -> f64 {
    let mut s: Vec<f64> = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in s.iter().enumerate() {
        let v = v.clamp(0.0, 1.0);
        d = d.max((i + 1) as f64 / n - v).max(v - i as f64 / n);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sum_of_products(x: &Matrix, y: &Matrix) -> Result<f64> {
        Ok((0..x.rows()).map(|i| x.get(i, 0) * y.get(i, 0)).sum())
    }

    #[test]
    fn observed_above_all_nulls_gives_zero() {
        let r = BaselineReport::from_scores(0.9, vec![0.1, 0.2, 0.05], 0);
        assert_eq!(r.p_value, 0.0);
        assert_eq!(r.p_smooth, 0.25);
    }

    #[test]
    fn neg_infinity_sentinel_gives_one() {
        assert_eq!(p_value(f64::NEG_INFINITY, &[0.1, -3.0, 7.0]), 1.0);
    }

    #[test]
    fn constant_score_function() {
        let x = Matrix::from_fn(10, 2, |i, j| (i + j) as f64);
        let r = random_pairing_null(&x, &x, &FnScore(|_: &Matrix, _: &Matrix| Ok(0.42)), 25, 3).unwrap();
        assert_eq!(r.null_mean, 0.42);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.null_scores.len(), 25);
    }

    #[test]
    fn same_seed_same_nulls() {
        let x = Matrix::from_fn(30, 1, |i, _| i as f64);
        let a = random_pairing_null(&x, &x, &FnScore(sum_of_products), 20, 11).unwrap();
        let b = random_pairing_null(&x, &x, &FnScore(sum_of_products), 20, 11).unwrap();
        let c = random_pairing_null(&x, &x, &FnScore(sum_of_products), 20, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.null_scores, c.null_scores);
        // the identity pairing maximises Σ x_i y_i for sorted x = y
        assert_eq!(a.p_value, 0.0);
    }

    #[test]
    fn failures_carry_run_index() {
        let x = Matrix::zeros(4, 1);
        let failing = FnScore(|_: &Matrix, y: &Matrix| {
            if y.get(0, 0) == 0.0 {
                Err(Error::Degenerate("test"))
            } else {
                Ok(0.0)
            }
        });
        let mut y = Matrix::zeros(4, 1);
        y.set(0, 0, 1.0);
        match random_pairing_null(&x, &y, &failing, 50, 0) {
            Err(Error::NullRun { run, .. }) => assert!(run < 50),
            other => panic!("expected NullRun, got {other:?}"),
        }
    }

    #[test]
    fn zero_runs_rejected() {
        let x = Matrix::zeros(3, 1);
        assert!(random_pairing_null(&x, &x, &FnScore(sum_of_products), 0, 0).is_err());
    }

    #[test]
    fn grid_reports_missing_cells() {
        let rep = |o: f64| Some(BaselineReport::from_scores(o, vec![0.0, 0.1], 0));
        let g = pvalue_grid(&[vec![rep(0.5), None], vec![rep(0.05), rep(0.9)]]).unwrap();
        assert_eq!(g.missing, vec![(0, 1)]);
        assert_eq!(g.p_value[0][0], Some(0.0));
        assert_eq!(g.p_value[1][0], Some(0.5));
        assert_eq!(g.observed[1][1], Some(0.9));
        assert!(pvalue_grid(&[]).is_err());
    }

    #[test]
    fn ks_of_perfect_grid_is_small() {
        let s: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_uniform(&s) - 0.005).abs() < 1e-12);
        assert!((ks_uniform(&[0.0; 10]) - 1.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn p_value_non_increasing_in_observed(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
            let nulls: Vec<f64> = null_permutation(40, seed, 0).iter().map(|&i| i as f64 / 20.0 - 1.0).collect();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            proptest::prop_assert!(p_value(hi, &nulls) <= p_value(lo, &nulls));
        }
    }
}
