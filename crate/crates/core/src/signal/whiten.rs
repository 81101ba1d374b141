use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::ar::{ar_autocovariance, is_stationary, reduce_to_stationary};
use super::{ArModel, SessionData, SessionMeta};
use crate::{Error, Result};

/// Prewhitened run: per-vertex response and per-vertex design, with residual
/// innovations scaled to unit variance.
#[derive(Debug, Clone)]
pub struct WhitenedSession {
    /// `T × N`.
    pub y: DMatrix<f64>,
    /// One `T × K` design per vertex.
    pub designs: Vec<DMatrix<f64>>,
    pub valid: Vec<bool>,
    /// Vertices whose AR model had to be order-reduced to be stationary.
    pub reduced: Vec<bool>,
    pub meta: SessionMeta,
}

impl WhitenedSession {
    pub fn n_volumes(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_vertices(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_tasks(&self) -> usize {
        self.designs.first().map_or(0, |d| d.ncols())
    }

    /// Wraps data that needs no whitening (white noise of known scale).
    pub fn unwhitened(session: &SessionData) -> Self {
        let n = session.n_vertices();
        Self {
            y: session.bold.clone(),
            designs: vec![session.design.clone(); n],
            valid: session.valid.clone(),
            reduced: vec![false; n],
            meta: session.meta.clone(),
        }
    }
}

/// Innovations-form whitening filter for one AR model: the first `p` samples
/// go through the inverse Cholesky factor of their stationary covariance,
/// later samples through `(x_t − Σ φ_j x_{t−j}) / σ`. This equals `L⁻¹ x` for
/// the Cholesky factor `L` of the full `T × T` AR covariance.
struct Whitener {
    phi: Vec<f64>,
    sigma: f64,
    head: DMatrix<f64>,
}

impl Whitener {
    fn new(phi: Vec<f64>, sigma2: f64) -> Result<Self> {
        let p = phi.len();
        let head = if p == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let gamma = ar_autocovariance(&phi, sigma2, p)?;
            let toeplitz = DMatrix::from_fn(p, p, |i, j| gamma[i.abs_diff(j)]);
            let chol = toeplitz
                .cholesky()
                .ok_or_else(|| Error::param("stationary AR covariance is not positive definite"))?;
            chol.l()
                .try_inverse()
                .ok_or_else(|| Error::param("singular AR head factor"))?
        };
        Ok(Self {
            phi,
            sigma: sigma2.sqrt(),
            head,
        })
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let p = self.phi.len().min(x.len());
        for t in 0..p {
            out[t] = (0..=t).map(|s| self.head[(t, s)] * x[s]).sum();
        }
        for t in p..x.len() {
            let pred: f64 = self.phi.iter().enumerate().map(|(j, c)| c * x[t - j - 1]).sum();
            out[t] = (x[t] - pred) / self.sigma;
        }
    }
}

/// Applies the AR whitening filter to one series.
pub fn whiten_series(x: &[f64], phi: &[f64], sigma2: f64) -> Result<Vec<f64>> {
    let w = Whitener::new(phi.to_vec(), sigma2)?;
    let mut out = vec![0.0; x.len()];
    w.apply(x, &mut out);
    Ok(out)
}

/// Prewhitens every vertex of a conditioned session with its AR model.
pub fn prewhiten(session: &SessionData, ar: &ArModel) -> Result<WhitenedSession> {
    let (t, n) = session.bold.shape();
    if ar.n_vertices() != n {
        return Err(Error::DimensionMismatch {
            what: "AR model vertices",
            expected: n,
            found: ar.n_vertices(),
        });
    }
    if t <= ar.order {
        return Err(Error::param("fewer volumes than the AR order"));
    }
    let k = session.n_tasks();
    let per_vertex: Vec<(Vec<f64>, DMatrix<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|v| -> Result<_> {
            let mut phi = ar.coefficients_at(v);
            let mut reduced = false;
            if !is_stationary(&phi) {
                phi = reduce_to_stationary(&phi);
                reduced = true;
            }
            let sigma2 = ar.innovation_var[v];
            if !(sigma2 > 0.0) {
                return Err(Error::param(format!("non-positive innovation variance at vertex {v}")));
            }
            let w = Whitener::new(phi, sigma2)?;
            let mut y = vec![0.0; t];
            w.apply(session.bold.column(v).as_slice(), &mut y);
            let mut x = DMatrix::zeros(t, k);
            let mut buf = vec![0.0; t];
            for c in 0..k {
                w.apply(session.design.column(c).as_slice(), &mut buf);
                x.set_column(c, &DVector::from_column_slice(&buf));
            }
            Ok((y, x, reduced))
        })
        .collect::<Result<_>>()?;
    let reduced: Vec<bool> = per_vertex.iter().map(|p| p.2).collect();
    if reduced.iter().any(|&r| r) {
        log::warn!(
            "{} vertices had non-stationary AR models and were order-reduced",
            reduced.iter().filter(|&&r| r).count()
        );
    }
    Ok(WhitenedSession {
        y: DMatrix::from_fn(t, n, |i, v| per_vertex[v].0[i]),
        designs: per_vertex.into_iter().map(|p| p.1).collect(),
        valid: session.valid.clone(),
        reduced,
        meta: session.meta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::signal::ar::tests::simulate_ar;
    use crate::signal::yule_walker;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn order_zero_unit_variance_is_identity() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        assert_eq!(whiten_series(&x, &[], 1.0).unwrap(), x);
    }

    #[test]
    fn matches_dense_inverse_cholesky() {
        let mut rng = rng_from(9, &[]);
        let t = 150;
        let x: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (phi, s2) in [(vec![0.6], 1.0), (vec![0.5, -0.3, 0.1], 2.5), (vec![0.2, 0.1, 0.05, 0.02, -0.1, 0.05], 0.7)] {
            let gamma = ar_autocovariance(&phi, s2, t).unwrap();
            let sigma = DMatrix::from_fn(t, t, |i, j| gamma[i.abs_diff(j)]);
            let l = sigma.cholesky().unwrap().l();
            let dense = l.solve_lower_triangular(&DVector::from_column_slice(&x)).unwrap();
            let fast = whiten_series(&x, &phi, s2).unwrap();
            for i in 0..t {
                assert!((dense[i] - fast[i]).abs() < 1e-8, "phi={phi:?} t={i}");
            }
        }
    }

    #[test]
    fn removes_ar1_autocorrelation() {
        let x = simulate_ar(&[0.6], 10_000, 21);
        let fit = yule_walker(&x, 1);
        let w = whiten_series(&x, &fit.coefficients, fit.variances[1]).unwrap();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let c0: f64 = w.iter().map(|v| (v - mean).powi(2)).sum();
        let c1: f64 = w.windows(2).map(|p| (p[0] - mean) * (p[1] - mean)).sum();
        assert!((c1 / c0).abs() < 0.03);
        assert!((c0 / w.len() as f64 - 1.0).abs() < 0.05);
    }

    #[test]
    fn equalises_variance_across_vertices() {
        let t = 5000;
        let a = simulate_ar(&[], t, 31);
        let b: Vec<f64> = simulate_ar(&[], t, 32).iter().map(|v| 2.0 * v).collect();
        let bold = DMatrix::from_fn(t, 2, |i, v| if v == 0 { a[i] } else { b[i] });
        let design = DMatrix::from_fn(t, 1, |i, _| ((i % 40) as f64 / 40.0) - 0.5);
        let mut s = SessionData::new(bold, design, DMatrix::zeros(t, 0), SessionMeta::default()).unwrap();
        s.percent_signal = true;
        let ar = crate::signal::fit_ar_yule_walker(&s.bold, 1).unwrap();
        let w = prewhiten(&s, &ar).unwrap();
        for v in 0..2 {
            let var = w.y.column(v).map(|x| x * x).sum() / t as f64;
            assert!((var - 1.0).abs() < 0.06, "vertex {v}: {var}");
        }
    }

    #[test]
    fn non_stationary_falls_back() {
        let t = 50;
        let bold = DMatrix::from_fn(t, 1, |i, _| (i as f64 * 0.7).sin());
        let design = DMatrix::from_fn(t, 1, |i, _| (i as f64 * 0.2).cos());
        let s = SessionData::new(bold, design, DMatrix::zeros(t, 0), SessionMeta::default()).unwrap();
        let ar = ArModel {
            order: 2,
            coefficients: DMatrix::from_row_slice(1, 2, &[0.5, 0.6]),
            innovation_var: vec![1.0],
            flagged: vec![false],
        };
        let w = prewhiten(&s, &ar).unwrap();
        assert_eq!(w.reduced, vec![true]);
        assert!(w.y.iter().all(|v| v.is_finite()));
    }
}
