use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::signal::WhitenedSession;
use crate::{Error, Result};

/// Ordinary least squares at one vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub rss: f64,
    pub dof: usize,
}

/// OLS with standard errors from the residual variance (`dof = T − K`).
/// All-zero design columns are left out and reported as NaN.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit> {
    let (t, k) = x.shape();
    if y.len() != t {
        return Err(Error::DimensionMismatch {
            what: "OLS response",
            expected: t,
            found: y.len(),
        });
    }
    let active: Vec<usize> = (0..k).filter(|&c| x.column(c).iter().any(|&v| v != 0.0)).collect();
    let ka = active.len();
    if ka == 0 || t <= ka {
        return Err(Error::RankDeficient);
    }
    let xa = x.select_columns(&active);
    let yv = DVector::from_column_slice(y);
    let xtx = xa.transpose() * &xa;
    let eig = SymmetricEigen::new(xtx.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    if !(lo > 1e-10 * hi) {
        return Err(Error::RankDeficient);
    }
    let xtx_inv = xtx.cholesky().ok_or(Error::RankDeficient)?.inverse();
    let b = &xtx_inv * (xa.transpose() * &yv);
    let resid = &yv - &xa * &b;
    let rss = resid.norm_squared();
    let dof = t - ka;
    let s2 = rss / dof as f64;
    let mut beta = vec![f64::NAN; k];
    let mut se = vec![f64::NAN; k];
    for (i, &c) in active.iter().enumerate() {
        beta[c] = b[i];
        se[c] = (s2 * xtx_inv[(i, i)]).sqrt();
    }
    Ok(OlsFit { beta, se, rss, dof })
}

/// Vertex-wise GLM estimates (`N × K`, percent signal change).
#[derive(Debug, Clone)]
pub struct ClassicalFit {
    pub beta: DMatrix<f64>,
    pub se: DMatrix<f64>,
    pub dof: usize,
    /// `T × N` whitened residuals; absent for aggregated fits.
    pub residuals: Option<DMatrix<f64>>,
    /// Residual variance per vertex (NaN where undefined).
    pub sigma2: Vec<f64>,
    /// False where the vertex was invalid or its design rank deficient.
    pub defined: Vec<bool>,
}

impl ClassicalFit {
    pub fn n_vertices(&self) -> usize {
        self.beta.nrows()
    }

    pub fn n_tasks(&self) -> usize {
        self.beta.ncols()
    }
}

/// Fits the GLM at every vertex of a prewhitened session.
pub fn fit_classical(session: &WhitenedSession) -> Result<ClassicalFit> {
    let (t, n) = session.y.shape();
    let k = session.n_tasks();
    let fits: Vec<Option<(OlsFit, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|v| {
            if !session.valid[v] {
                return None;
            }
            let x = &session.designs[v];
            let y = session.y.column(v);
            match ols(x, y.as_slice()) {
                Ok(f) => {
                    let b = DVector::from_iterator(k, f.beta.iter().map(|b| if b.is_nan() { 0.0 } else { *b }));
                    let r = (y - x * b).iter().copied().collect();
                    Some((f, r))
                }
                Err(_) => None,
            }
        })
        .collect();
    let undefined = fits.iter().filter(|f| f.is_none()).count();
    if undefined > 0 {
        log::warn!("{undefined} of {n} vertices have undefined GLM coefficients");
    }
    let dof = fits
        .iter()
        .flatten()
        .map(|(f, _)| f.dof)
        .max()
        .unwrap_or(t.saturating_sub(k));
    if dof == 0 {
        return Err(Error::RankDeficient);
    }
    let mut beta = DMatrix::from_element(n, k, f64::NAN);
    let mut se = DMatrix::from_element(n, k, f64::NAN);
    let mut residuals = DMatrix::zeros(t, n);
    let mut sigma2 = vec![f64::NAN; n];
    for (v, fit) in fits.iter().enumerate() {
        if let Some((f, r)) = fit {
            for c in 0..k {
                beta[(v, c)] = f.beta[c];
                se[(v, c)] = f.se[c];
            }
            residuals.set_column(v, &DVector::from_column_slice(r));
            sigma2[v] = f.rss / f.dof as f64;
        }
    }
    Ok(ClassicalFit {
        beta,
        se,
        dof,
        residuals: Some(residuals),
        sigma2,
        defined: fits.iter().map(Option::is_some).collect(),
    })
}

/// Per-run fits and their across-run average.
#[derive(Debug, Clone)]
pub struct MultiRunClassical {
    pub runs: Vec<ClassicalFit>,
    pub average: ClassicalFit,
}

/// Fits each run separately; the average has `se = √(Σ se²) / J` (runs
/// independent) and pooled degrees of freedom.
pub fn fit_classical_multi(sessions: &[WhitenedSession]) -> Result<MultiRunClassical> {
    let runs = sessions.iter().map(fit_classical).collect::<Result<Vec<_>>>()?;
    let first = runs.first().ok_or_else(|| Error::param("no runs to fit"))?;
    let (n, k) = (first.n_vertices(), first.n_tasks());
    for r in &runs {
        if r.n_vertices() != n || r.n_tasks() != k {
            return Err(Error::DimensionMismatch {
                what: "runs (vertices x tasks)",
                expected: n * k,
                found: r.n_vertices() * r.n_tasks(),
            });
        }
    }
    let j = runs.len() as f64;
    let beta = runs.iter().fold(DMatrix::zeros(n, k), |a, r| a + &r.beta) / j;
    let se = runs
        .iter()
        .fold(DMatrix::zeros(n, k), |a, r| a + r.se.map(|s| s * s))
        .map(f64::sqrt)
        / j;
    let sigma2 = (0..n)
        .map(|v| runs.iter().map(|r| r.sigma2[v]).sum::<f64>() / j)
        .collect();
    let average = ClassicalFit {
        beta,
        se,
        dof: runs.iter().map(|r| r.dof).sum(),
        residuals: None,
        sigma2,
        defined: (0..n).map(|v| runs.iter().all(|r| r.defined[v])).collect(),
    };
    Ok(MultiRunClassical { runs, average })
}

/// Group average of subject estimates with one-sample t machinery:
/// `se = sd / √M` (sample sd), `dof = M − 1`. Vertices with zero spread are
/// marked undefined.
pub fn group_classical(fits: &[ClassicalFit]) -> Result<ClassicalFit> {
    let m = fits.len();
    if m < 2 {
        return Err(Error::param("group analysis needs at least two subjects"));
    }
    let (n, k) = (fits[0].n_vertices(), fits[0].n_tasks());
    if fits.iter().any(|f| f.n_vertices() != n || f.n_tasks() != k) {
        return Err(Error::DimensionMismatch {
            what: "subjects (vertices x tasks)",
            expected: n * k,
            found: fits.iter().map(|f| f.n_vertices() * f.n_tasks()).find(|&s| s != n * k).unwrap(),
        });
    }
    let mf = m as f64;
    let mut beta = DMatrix::zeros(n, k);
    let mut se = DMatrix::zeros(n, k);
    let mut defined = vec![true; n];
    for v in 0..n {
        for c in 0..k {
            let vals: Vec<f64> = fits.iter().map(|f| f.beta[(v, c)]).collect();
            let mean = vals.iter().sum::<f64>() / mf;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (mf - 1.0);
            beta[(v, c)] = mean;
            se[(v, c)] = (var / mf).sqrt();
            if !(var > 0.0) {
                defined[v] = false;
            }
        }
        if fits.iter().any(|f| !f.defined[v]) {
            defined[v] = false;
        }
    }
    if defined.iter().any(|d| !d) {
        log::warn!(
            "{} vertices have zero or undefined between-subject spread",
            defined.iter().filter(|d| !**d).count()
        );
    }
    Ok(ClassicalFit {
        beta,
        se,
        dof: m - 1,
        residuals: None,
        sigma2: vec![f64::NAN; n],
        defined,
    })
}
