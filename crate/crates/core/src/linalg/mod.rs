//! Sparse matrices, fill-reducing ordering and the envelope Cholesky used for
//! GMRF precisions and posterior precisions.

mod cholesky;
mod ordering;
mod sparse;

pub use cholesky::EnvelopeCholesky;
pub use ordering::reverse_cuthill_mckee;
pub use sparse::SparseMatrix;

use nalgebra::{DMatrix, DVector};

/// Dense symmetric solve via Cholesky; `None` when `a` is not positive definite.
pub fn dense_spd_inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|c| c.inverse())
}

/// Log-density of `N(0, cov)` at `x`, evaluated densely. Test and oracle use.
pub fn dense_gaussian_logpdf(x: &DVector<f64>, cov: &DMatrix<f64>) -> Option<f64> {
    let chol = cov.clone().cholesky()?;
    let n = x.len() as f64;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let alpha = chol.solve(x);
    Some(-0.5 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + x.dot(&alpha)))
}
