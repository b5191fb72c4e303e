//! Representational similarity analysis: Spearman correlation between the
//! upper triangles of two representational dissimilarity matrices.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::baseline::PairedScore;
use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RdmMeasure {
    #[default]
    OneMinusPearson,
    OneMinusCosine,
    Euclidean,
}

impl RdmMeasure {
    pub fn as_str(self) -> &'static str {
        match self {
            RdmMeasure::OneMinusPearson => "one_minus_pearson",
            RdmMeasure::OneMinusCosine => "one_minus_cosine",
            RdmMeasure::Euclidean => "euclidean",
        }
    }
}

impl core::str::FromStr for RdmMeasure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_minus_pearson" | "pearson" => Ok(RdmMeasure::OneMinusPearson),
            "one_minus_cosine" | "cosine" => Ok(RdmMeasure::OneMinusCosine),
            "euclidean" => Ok(RdmMeasure::Euclidean),
            other => Err(Error::InvalidParameter(alloc::format!("unknown RDM measure `{other}`"))),
        }
    }
}

/// Symmetric dissimilarity matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rdm {
    pub measure: RdmMeasure,
    pub d: Matrix,
    /// Rows whose norm (cosine) or spread (Pearson) vanished; their
    /// off-diagonal dissimilarities are set to 1.
    pub flagged_rows: Vec<usize>,
}

impl Rdm {
    pub fn n(&self) -> usize {
        self.d.rows()
    }

    /// Strictly-upper-triangular entries in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
        for i in 0..n {
            out.extend_from_slice(&self.d.row(i)[i + 1..]);
        }
        out
    }
}

pub fn rdm(space: &Matrix, measure: RdmMeasure) -> Result<Rdm> {
    let (n, dim) = space.shape();
    if n < 2 {
        return Err(Error::Degenerate("RDM needs at least two rows"));
    }
    if !space.all_finite() {
        return Err(Error::NonFinite("RDM input"));
    }
    let mut d = Matrix::zeros(n, n);
    let mut flagged_rows = Vec::new();
    match measure {
        RdmMeasure::Euclidean => {
            for i in 0..n {
                for j in i + 1..n {
                    let s: f64 = space
                        .row(i)
                        .iter()
                        .zip(space.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let v = sqrt(s);
                    d.set(i, j, v);
                    d.set(j, i, v);
                }
            }
        }
        RdmMeasure::OneMinusPearson | RdmMeasure::OneMinusCosine => {
            let center = measure == RdmMeasure::OneMinusPearson;
            // unit-normalized (and for Pearson, centred) rows
            let mut unit = space.clone();
            let mut ok = vec![true; n];
            for (i, ok_i) in ok.iter_mut().enumerate() {
                let row = unit.row_mut(i);
                if center {
                    let m = row.iter().sum::<f64>() / dim as f64;
                    row.iter_mut().for_each(|v| *v -= m);
                }
                let norm = sqrt(row.iter().map(|v| v * v).sum::<f64>());
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                } else {
                    *ok_i = false;
                    flagged_rows.push(i);
                }
            }
            for i in 0..n {
                for j in i + 1..n {
                    let v = if ok[i] && ok[j] {
                        let c: f64 = unit.row(i).iter().zip(unit.row(j)).map(|(a, b)| a * b).sum();
                        (1.0 - c.clamp(-1.0, 1.0)).max(0.0)
                    } else {
                        1.0
                    };
                    d.set(i, j, v);
                    d.set(j, i, v);
                }
            }
        }
    }
    Ok(Rdm {
        measure,
        d,
        flagged_rows,
    })
}

/// Average (fractional) ranks, 1-based; tied values share the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && values[idx[j]] == values[idx[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean of (i+1)..=j
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson_centered(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::Undefined("zero rank variance"));
    }
    Ok((sab / sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "Spearman inputs",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Undefined("fewer than two observations"));
    }
    pearson_centered(&average_ranks(a), &average_ranks(b))
}

/// RSA score between two aligned spaces (rows correspond).
pub fn rsa(x: &Matrix, y: &Matrix, measure: RdmMeasure) -> Result<f64> {
    let scorer = Rsa(measure);
    scorer.score(&scorer.prepare(x, y)?, None)
}

/// RSA as a [`PairedScore`]. Row permutations of `Y` only reorder the
/// entries of its RDM, so ranks are computed once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Rsa(pub RdmMeasure);

#[derive(Debug, Clone)]
pub struct PreparedRsa {
    n: usize,
    ranks_x: Vec<f64>,
    mean_x: f64,
    ss_x: f64,
    // full n×n matrix of Y's upper-triangle ranks, mirrored
    ranks_y: Matrix,
    mean_y: f64,
    ss_y: f64,
}

fn centered_ss(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum())
}

impl PairedScore for Rsa {
    type Prepared = PreparedRsa;

    fn prepare(&self, x: &Matrix, y: &Matrix) -> Result<PreparedRsa> {
        if x.rows() != y.rows() {
            return Err(Error::DimensionMismatch {
                context: "RSA row count",
                expected: x.rows(),
                actual: y.rows(),
            });
        }
        let n = x.rows();
        if n < 3 {
            return Err(Error::Degenerate("RSA needs at least three rows"));
        }
        let ranks_x = average_ranks(&rdm(x, self.0)?.upper_triangle());
        let ry = average_ranks(&rdm(y, self.0)?.upper_triangle());
        let mut ranks_y = Matrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                ranks_y.set(i, j, ry[k]);
                ranks_y.set(j, i, ry[k]);
                k += 1;
            }
        }
        let (mean_x, ss_x) = centered_ss(&ranks_x);
        let (mean_y, ss_y) = centered_ss(&ry);
        if ss_x <= 0.0 || ss_y <= 0.0 {
            return Err(Error::Undefined("constant RDM"));
        }
        Ok(PreparedRsa {
            n,
            ranks_x,
            mean_x,
            ss_x,
            ranks_y,
            mean_y,
            ss_y,
        })
    }

    fn score(&self, p: &PreparedRsa, perm: Option<&[usize]>) -> Result<f64> {
        let mut k = 0;
        let mut sxy = 0.0;
        for i in 0..p.n {
            let pi = perm.map_or(i, |q| q[i]);
            for j in i + 1..p.n {
                let pj = perm.map_or(j, |q| q[j]);
                sxy += (p.ranks_x[k] - p.mean_x) * (p.ranks_y.get(pi, pj) - p.mean_y);
                k += 1;
            }
        }
        Ok((sxy / sqrt(p.ss_x * p.ss_y)).clamp(-1.0, 1.0))
    }

    fn n_rows(&self, p: &PreparedRsa) -> usize {
        p.n
    }
}
