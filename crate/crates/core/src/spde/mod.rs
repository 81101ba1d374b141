//! SPDE Matérn prior on a triangulated surface.
//!
//! For `α = 2` on a 2-manifold the Matérn field with smoothness `ν = 1` has
//! the GMRF precision
//!
//! ```text
//! Q(κ, τ) = τ² (κ⁴ C + 2κ² G + G C⁻¹ G)
//! ```
//!
//! with `C` the lumped mass and `G` the stiffness matrix. Lumping keeps
//! `G C⁻¹ G` inside the two-hop neighbourhood, so `Q` has a fixed sparsity
//! pattern whose values depend only on `(κ, τ)`.

mod bessel;

pub use bessel::bessel_k1;

use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{reverse_cuthill_mckee, EnvelopeCholesky, SparseMatrix};
use crate::mesh::FemMatrices;
use crate::rng::rng_from;
use crate::{Error, Result};

/// SPDE hyperparameters, stored in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdeHyper {
    pub log_kappa: f64,
    pub log_tau: f64,
}

impl SpdeHyper {
    pub fn new(kappa: f64, tau: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite() && tau > 0.0 && tau.is_finite()) {
            return Err(Error::param(format!(
                "SPDE hyperparameters must be positive and finite (kappa = {kappa}, tau = {tau})"
            )));
        }
        Ok(Self {
            log_kappa: kappa.ln(),
            log_tau: tau.ln(),
        })
    }

    pub fn from_log(log_kappa: f64, log_tau: f64) -> Self {
        Self { log_kappa, log_tau }
    }

    pub fn kappa(&self) -> f64 {
        self.log_kappa.exp()
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    /// Marginal variance of the continuous-domain field, `1 / (4π κ² τ²)`.
    pub fn marginal_variance(&self) -> f64 {
        1.0 / (4.0 * std::f64::consts::PI * (self.kappa() * self.tau()).powi(2))
    }

    /// Distance at which correlation is near 0.13, `√8 / κ`.
    pub fn range(&self) -> f64 {
        8f64.sqrt() / self.kappa()
    }

    /// τ giving the requested marginal variance at this κ.
    pub fn tau_for_variance(kappa: f64, variance: f64) -> f64 {
        1.0 / (kappa * (4.0 * std::f64::consts::PI * variance).sqrt())
    }
}

/// Builds `Q(κ, τ)` directly from the FEM matrices.
pub fn build_precision(fem: &FemMatrices, h: &SpdeHyper) -> SparseMatrix {
    SpdeOperator::new(fem.clone()).precision(h)
}

/// FEM matrices arranged on the common pattern of `Q`, plus a cached ordering
/// and the most recent factorization.
#[derive(Debug)]
pub struct SpdeOperator {
    fem: FemMatrices,
    pattern: SparseMatrix,
    c_vals: Vec<f64>,
    g_vals: Vec<f64>,
    gcg_vals: Vec<f64>,
    ordering: Vec<usize>,
    cache: Mutex<Option<(SpdeHyper, Arc<EnvelopeCholesky>)>>,
}

impl Clone for SpdeOperator {
    fn clone(&self) -> Self {
        Self {
            fem: self.fem.clone(),
            pattern: self.pattern.clone(),
            c_vals: self.c_vals.clone(),
            g_vals: self.g_vals.clone(),
            gcg_vals: self.gcg_vals.clone(),
            ordering: self.ordering.clone(),
            cache: Mutex::new(None),
        }
    }
}

impl SpdeOperator {
    pub fn new(fem: FemMatrices) -> Self {
        let c = fem.mass_matrix();
        let g = fem.stiffness();
        let inv_mass: Vec<f64> = fem.mass().iter().map(|m| 1.0 / m).collect();
        let gcg = g.mul_diag_mul(&inv_mass, g);
        let pattern = gcg.add_scaled(1.0, g, 0.0).add_scaled(1.0, &c, 0.0);
        let on_pattern = |m: &SparseMatrix| -> Vec<f64> {
            pattern.triplets().map(|(i, j, _)| m.get(i, j)).collect()
        };
        let (c_vals, g_vals, gcg_vals) = (on_pattern(&c), on_pattern(g), on_pattern(&gcg));
        let ordering = reverse_cuthill_mckee(&pattern.pattern_graph());
        Self {
            fem,
            pattern,
            c_vals,
            g_vals,
            gcg_vals,
            ordering,
            cache: Mutex::new(None),
        }
    }

    pub fn fem(&self) -> &FemMatrices {
        &self.fem
    }

    pub fn n(&self) -> usize {
        self.fem.n()
    }

    /// Fill-reducing vertex ordering (`perm[new] = old`) for the pattern of `Q`.
    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    /// The sparsity pattern shared by every `Q(κ, τ)`.
    pub fn pattern(&self) -> &SparseMatrix {
        &self.pattern
    }

    pub fn precision(&self, h: &SpdeHyper) -> SparseMatrix {
        let (k2, t2) = (h.kappa().powi(2), h.tau().powi(2));
        let vals = self
            .c_vals
            .iter()
            .zip(&self.g_vals)
            .zip(&self.gcg_vals)
            .map(|((c, g), gcg)| t2 * (k2 * k2 * c + 2.0 * k2 * g + gcg))
            .collect();
        self.pattern.with_values(vals)
    }

    /// True when the `κ⁴C` term is negligible against `G C⁻¹ G`, i.e. `Q` is
    /// numerically close to the singular `κ = 0` limit.
    pub fn is_near_singular(&self, h: &SpdeHyper) -> bool {
        let k4 = h.kappa().powi(4);
        let cmin = self.fem.mass().iter().cloned().fold(f64::INFINITY, f64::min);
        let gcg_max = self.gcg_vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        k4 * cmin < 1e-10 * gcg_max
    }

    pub fn factor(&self, h: &SpdeHyper) -> Result<Arc<EnvelopeCholesky>> {
        if let Some((cached, f)) = self.cache.lock().unwrap().as_ref() {
            if cached == h {
                return Ok(Arc::clone(f));
            }
        }
        if self.is_near_singular(h) {
            log::warn!(
                "SPDE precision is near singular at kappa = {:e}",
                h.kappa()
            );
        }
        let f = Arc::new(EnvelopeCholesky::factor_with(
            &self.precision(h),
            self.ordering.clone(),
            1,
        )?);
        *self.cache.lock().unwrap() = Some((*h, Arc::clone(&f)));
        Ok(f)
    }

    pub fn log_det(&self, h: &SpdeHyper) -> Result<f64> {
        Ok(self.factor(h)?.log_det())
    }
}

const SAMPLE_CHUNK: usize = 256;

/// Draws `n_samples` vectors with precision `q`, returned as rows. Samples
/// are produced in fixed-size chunks with per-chunk seeds, so the output does
/// not depend on the number of threads.
pub fn sample_gmrf(q: &SparseMatrix, n_samples: usize, seed: u64) -> Result<DMatrix<f64>> {
    let factor = EnvelopeCholesky::factor(q)?;
    Ok(sample_with_factor(&factor, n_samples, seed))
}

pub fn sample_with_factor(factor: &EnvelopeCholesky, n_samples: usize, seed: u64) -> DMatrix<f64> {
    let n = factor.dim();
    let n_chunks = n_samples.div_ceil(SAMPLE_CHUNK);
    let chunks: Vec<Vec<Vec<f64>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from(seed, &[c as u64]);
            let count = SAMPLE_CHUNK.min(n_samples - c * SAMPLE_CHUNK);
            (0..count)
                .map(|_| {
                    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                    factor.whiten_inverse(&z)
                })
                .collect()
        })
        .collect();
    let rows: Vec<&Vec<f64>> = chunks.iter().flatten().collect();
    DMatrix::from_fn(n_samples, n, |s, v| rows[s][v])
}

/// Matérn covariance with smoothness 1: `σ² (κd) K₁(κd)`, equal to `σ²` at 0.
pub fn matern_cov(d: f64, sigma2: f64, kappa: f64) -> f64 {
    assert!(d >= 0.0, "distance must be non-negative");
    let x = kappa * d;
    if x == 0.0 {
        sigma2
    } else {
        sigma2 * x * bessel_k1(x)
    }
}

/// Coordinate-format text (`row col value` per line, 0-based) for debugging.
pub fn export_coo(q: &SparseMatrix) -> String {
    let mut out = format!("{} {} {}\n", q.nrows(), q.ncols(), q.nnz());
    for (i, j, v) in q.triplets() {
        writeln!(out, "{i} {j} {v}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{assemble_fem, SurfaceMesh};

    fn op(mesh: &SurfaceMesh) -> SpdeOperator {
        SpdeOperator::new(assemble_fem(mesh).unwrap())
    }

    #[test]
    fn tau_scaling_is_exact() {
        let o = op(&SurfaceMesh::icosphere(1, 5.0).unwrap());
        let q1 = o.precision(&SpdeHyper::new(0.7, 1.3).unwrap());
        let q2 = o.precision(&SpdeHyper::new(0.7, 2.6).unwrap());
        for (a, b) in q1.values().iter().zip(q2.values()) {
            assert_eq!(4.0 * a, *b);
        }
        assert_eq!(q1.asymmetry(), 0.0);
    }

    #[test]
    fn pattern_within_two_hops() {
        // strip of triangles: a path-like mesh
        let m = SurfaceMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.5, 1.0, 0.0],
                [1.5, 1.0, 0.0],
                [2.0, 0.0, 0.0],
                [2.5, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [1, 3, 2], [1, 4, 3], [4, 5, 3]],
        )
        .unwrap();
        let o = op(&m);
        let q = o.precision(&SpdeHyper::new(1.0, 1.0).unwrap());
        let adj = m.adjacency();
        let two_hop = |i: usize, j: usize| {
            i == j || adj.contains(i, j) || adj.neighbors(i).iter().any(|&k| adj.contains(k, j))
        };
        for (i, j, _) in q.triplets() {
            assert!(two_hop(i, j), "({i},{j}) outside two-hop neighbourhood");
        }
        // 0 and 5 are three hops apart
        assert_eq!(q.get(0, 5), 0.0);
        assert!(q.get(0, 3) != 0.0);
    }

    #[test]
    fn near_singular_flag() {
        let o = op(&SurfaceMesh::icosphere(1, 1.0).unwrap());
        assert!(o.is_near_singular(&SpdeHyper::new(1e-6, 1.0).unwrap()));
        assert!(!o.is_near_singular(&SpdeHyper::new(1.0, 1.0).unwrap()));
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let q = SparseMatrix::from_diagonal(&[4.0, 4.0]);
        let a = sample_gmrf(&q, 1000, 11).unwrap();
        let b = sample_gmrf(&q, 1000, 11).unwrap();
        assert_eq!(a, b);
        let var0 = a.column(0).iter().map(|v| v * v).sum::<f64>() / 1000.0;
        assert!((var0 - 0.25).abs() < 0.04);
    }

    #[test]
    fn identity_sample_covariance() {
        let n = 100_000;
        let s = sample_gmrf(&SparseMatrix::identity(3), n, 5).unwrap();
        let tol = 3.0 / (n as f64).sqrt();
        for i in 0..3 {
            for j in 0..3 {
                let c = s.column(i).dot(&s.column(j)) / n as f64;
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((c - expect).abs() < tol * if i == j { 2f64.sqrt() } else { 1.0 });
            }
        }
    }

    #[test]
    fn matern_values() {
        assert_eq!(matern_cov(0.0, 2.5, 0.3), 2.5);
        assert!((matern_cov(1.0, 1.0, 1.0) - 0.601_907_230_197_234_6).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let c = matern_cov(i as f64 * 0.1, 1.0, 0.8);
            assert!(c < prev || i == 0);
            prev = c;
        }
    }

    #[test]
    fn factor_failure_reports_pivot() {
        let q = SparseMatrix::from_diagonal(&[1.0, -2.0]);
        match sample_gmrf(&q, 10, 0) {
            Err(Error::NotPositiveDefinite { min_pivot, .. }) => assert_eq!(min_pivot, -2.0),
            other => panic!("{other:?}"),
        }
    }
}
