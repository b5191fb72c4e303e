//! Thin wrappers over `nalgebra` decompositions.

use alloc::vec::Vec;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::math::sqrt;
use crate::matrix::Matrix;

/// Eigen-decomposition of a symmetric matrix, eigenpairs sorted by
/// decreasing eigenvalue. Eigenvectors are the columns of the result.
pub fn symmetric_eigen_desc(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// `cov^{-1/2}` with eigenvalues floored at `floor_rel × λ_max`.
pub fn inverse_sqrt_psd(cov: DMatrix<f64>, floor_rel: f64) -> DMatrix<f64> {
    let (values, vectors) = symmetric_eigen_desc(cov);
    let lmax = values.first().copied().unwrap_or(0.0).max(0.0);
    let floor = (floor_rel * lmax).max(f64::MIN_POSITIVE);
    let d = values.len();
    let scaled = DMatrix::from_fn(vectors.nrows(), d, |r, c| vectors[(r, c)] / sqrt(values[c].max(floor)));
    scaled * vectors.transpose()
}

/// Haar-distributed random orthogonal `d×d` matrix (QR of a Gaussian matrix
/// with the sign of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    let mut out = Matrix::from_dmatrix(&q);
    for c in 0..d {
        if r[(c, c)] < 0.0 {
            for i in 0..d {
                out.set(i, c, -out.get(i, c));
            }
        }
    }
    out
}
