//! Singular-vector canonical correlation analysis.
//!
//! Each side is column-centred and reduced to its leading singular
//! directions (enough to cover `variance_keep` of the squared singular
//! values). The reduced matrices are whitened and the singular values of
//! their cross-covariance are the canonical correlations; the score is
//! their mean.

use alloc::vec::Vec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baseline::PairedScore;
use crate::error::{Error, Result};
use crate::linalg::{inverse_sqrt_psd, symmetric_eigen_desc};
use crate::math::sqrt;
use crate::matrix::Matrix;

// Eigenvalues below this fraction of the largest are numerical noise.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvccaConfig {
    /// Fraction of variance the retained directions must cover, in `(0, 1]`.
    pub variance_keep: f64,
    /// Whitening regularizer: covariance eigenvalues are floored at
    /// `epsilon × λ_max`.
    pub epsilon: f64,
    pub max_components: Option<usize>,
}

impl Default for SvccaConfig {
    fn default() -> Self {
        Self {
            variance_keep: 0.99,
            epsilon: 1e-6,
            max_components: None,
        }
    }
}

impl SvccaConfig {
    fn validate(&self) -> Result<()> {
        if !(self.variance_keep > 0.0 && self.variance_keep <= 1.0) {
            return Err(Error::InvalidParameter(alloc::format!(
                "variance_keep must be in (0, 1], got {}",
                self.variance_keep
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter("epsilon must be finite and non-negative".into()));
        }
        if self.max_components == Some(0) {
            return Err(Error::InvalidParameter("max_components must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvccaResult {
    pub score: f64,
    /// Canonical correlations, descending, clamped to `[0, 1]`.
    pub correlations: Vec<f64>,
    pub components_x: usize,
    pub components_y: usize,
}

/// Centred `n × k` projection of `x` onto its leading singular directions
/// (`U_k S_k`).
pub fn reduce(x: &Matrix, cfg: &SvccaConfig) -> Result<Matrix> {
    cfg.validate()?;
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::Degenerate("need at least two rows"));
    }
    if d == 0 {
        return Err(Error::Empty("matrix has no columns"));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("SVCCA input"));
    }
    let mut xc = x.clone();
    xc.center_columns();
    let xc = xc.to_dmatrix();

    // Work in whichever of the n×n Gram or d×d covariance is smaller.
    let use_gram = n <= d;
    let (values, vectors) = if use_gram {
        symmetric_eigen_desc(&xc * xc.transpose())
    } else {
        symmetric_eigen_desc(xc.transpose() * &xc)
    };
    let lmax = values.first().copied().unwrap_or(0.0);
    if !(lmax > 0.0) {
        return Err(Error::Degenerate("all singular values are zero"));
    }
    let rank = values.iter().take_while(|&&v| v > RANK_TOL * lmax).count();
    let total: f64 = values[..rank].iter().sum();
    let mut k = 0;
    let mut cum = 0.0;
    while k < rank {
        cum += values[k];
        k += 1;
        if cum >= cfg.variance_keep * total {
            break;
        }
    }
    if let Some(cap) = cfg.max_components {
        k = k.min(cap);
    }
    let proj = if use_gram {
        DMatrix::from_fn(n, k, |i, c| vectors[(i, c)] * sqrt(values[c]))
    } else {
        xc * vectors.columns(0, k)
    };
    Ok(Matrix::from_dmatrix(&proj))
}

/// Whitened reduction `Z` with `ZᵀZ / (n − 1) ≈ I`.
fn whiten(p: &Matrix, epsilon: f64) -> DMatrix<f64> {
    let p = p.to_dmatrix();
    let n = p.nrows() as f64;
    let cov = p.transpose() * &p / (n - 1.0);
    p * inverse_sqrt_psd(cov, epsilon)
}

fn correlations_of(zx: &DMatrix<f64>, zy: &DMatrix<f64>) -> Vec<f64> {
    let n = zx.nrows() as f64;
    let cross = zx.transpose() * zy / (n - 1.0);
    let mut s: Vec<f64> = cross
        .singular_values()
        .iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.truncate(zx.ncols().min(zy.ncols()));
    s
}

fn check_pair(x: &Matrix, y: &Matrix) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::DimensionMismatch {
            context: "SVCCA row count",
            expected: x.rows(),
            actual: y.rows(),
        });
    }
    Ok(())
}

pub fn svcca(x: &Matrix, y: &Matrix, cfg: &SvccaConfig) -> Result<SvccaResult> {
    let scorer = Svcca(*cfg);
    let prepared = scorer.prepare(x, y)?;
    Ok(prepared.result(None))
}

/// SVCCA as a [`PairedScore`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Svcca(pub SvccaConfig);

/// Whitened reductions of both sides.
#[derive(Debug, Clone)]
pub struct PreparedSvcca {
    zx: DMatrix<f64>,
    zy: DMatrix<f64>,
}

impl PreparedSvcca {
    pub fn result(&self, perm: Option<&[usize]>) -> SvccaResult {
        let correlations = match perm {
            None => correlations_of(&self.zx, &self.zy),
            Some(p) => {
                let zy = self.zy.select_rows(p.iter());
                correlations_of(&self.zx, &zy)
            }
        };
        let score = if correlations.is_empty() {
            0.0
        } else {
            (correlations.iter().sum::<f64>() / correlations.len() as f64).clamp(0.0, 1.0)
        };
        SvccaResult {
            score,
            correlations,
            components_x: self.zx.ncols(),
            components_y: self.zy.ncols(),
        }
    }
}

impl PairedScore for Svcca {
    type Prepared = PreparedSvcca;

    fn prepare(&self, x: &Matrix, y: &Matrix) -> Result<PreparedSvcca> {
        check_pair(x, y)?;
        let px = reduce(x, &self.0)?;
        let py = reduce(y, &self.0)?;
        Ok(PreparedSvcca {
            zx: whiten(&px, self.0.epsilon),
            zy: whiten(&py, self.0.epsilon),
        })
    }

    fn score(&self, prepared: &PreparedSvcca, perm: Option<&[usize]>) -> Result<f64> {
        Ok(prepared.result(perm).score)
    }

    fn n_rows(&self, prepared: &PreparedSvcca) -> usize {
        prepared.zx.nrows()
    }
}
