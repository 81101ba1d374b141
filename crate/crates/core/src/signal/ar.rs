use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mesh::Smoother;
use crate::{Error, Result};

/// Per-vertex AR(p) noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub order: usize,
    /// `N × p`, row `v` holds `φ₁ … φ_p` for vertex `v`.
    pub coefficients: DMatrix<f64>,
    pub innovation_var: Vec<f64>,
    /// Vertices whose fit needed ridge stabilisation.
    pub flagged: Vec<bool>,
}

impl ArModel {
    /// Order-0 model with the given innovation variances.
    pub fn white(innovation_var: Vec<f64>) -> Self {
        let n = innovation_var.len();
        Self {
            order: 0,
            coefficients: DMatrix::zeros(n, 0),
            innovation_var,
            flagged: vec![false; n],
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.innovation_var.len()
    }

    pub fn coefficients_at(&self, v: usize) -> Vec<f64> {
        self.coefficients.row(v).iter().copied().collect()
    }
}

/// Output of the Levinson-Durbin recursion on sample autocovariances.
#[derive(Debug, Clone)]
pub struct YuleWalkerFit {
    pub coefficients: Vec<f64>,
    /// Innovation variance for orders `0..=p`.
    pub variances: Vec<f64>,
    pub reflection: Vec<f64>,
    pub ridged: bool,
}

/// Biased (1/T) sample autocovariances at lags `0..=max_lag`.
fn autocovariance(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    (0..=max_lag)
        .map(|h| c[..n - h].iter().zip(&c[h..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect()
}

fn levinson(acov: &[f64], p: usize) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut phi = vec![0.0; p];
    let mut vars = vec![acov[0]];
    let mut refl = Vec::with_capacity(p);
    if !(acov[0] > 0.0) {
        return None;
    }
    for m in 1..=p {
        let prev = vars[m - 1];
        let num = acov[m] - (1..m).map(|j| phi[j - 1] * acov[m - j]).sum::<f64>();
        let k = num / prev;
        if !(k.abs() < 1.0) {
            return None;
        }
        let old = phi.clone();
        phi[m - 1] = k;
        for j in 1..m {
            phi[j - 1] = old[j - 1] - k * old[m - j - 1];
        }
        vars.push(prev * (1.0 - k * k));
        refl.push(k);
    }
    Some((phi, vars, refl))
}

/// Yule-Walker AR(p) fit of one series. A singular autocovariance system is
/// stabilised by inflating the lag-0 term (ridge) and flagged.
pub fn yule_walker(x: &[f64], p: usize) -> YuleWalkerFit {
    let mut acov = autocovariance(x, p);
    if let Some((coefficients, variances, reflection)) = levinson(&acov, p) {
        if variances.iter().all(|&v| v > 0.0) {
            return YuleWalkerFit {
                coefficients,
                variances,
                reflection,
                ridged: false,
            };
        }
    }
    let mut ridge = 1e-8 * acov[0].abs().max(1e-300);
    loop {
        acov[0] += ridge;
        if let Some((coefficients, variances, reflection)) = levinson(&acov, p) {
            if variances.iter().all(|&v| v > 0.0) {
                return YuleWalkerFit {
                    coefficients,
                    variances,
                    reflection,
                    ridged: true,
                };
            }
        }
        ridge *= 10.0;
    }
}

/// Fits AR(p) at every vertex of a `T × N` residual matrix.
pub fn fit_ar_yule_walker(residuals: &DMatrix<f64>, p: usize) -> Result<ArModel> {
    let (t, n) = residuals.shape();
    if t <= 3 * p {
        return Err(Error::param(format!(
            "AR({p}) needs more than {} time points, got {t}",
            3 * p
        )));
    }
    let fits: Vec<YuleWalkerFit> = (0..n)
        .into_par_iter()
        .map(|v| yule_walker(residuals.column(v).as_slice(), p))
        .collect();
    let flagged: Vec<bool> = fits.iter().map(|f| f.ridged).collect();
    if flagged.iter().any(|&f| f) {
        log::warn!(
            "{} vertices needed ridge-stabilised Yule-Walker solves",
            flagged.iter().filter(|&&f| f).count()
        );
    }
    Ok(ArModel {
        order: p,
        coefficients: DMatrix::from_fn(n, p, |v, j| fits[v].coefficients[j]),
        innovation_var: fits.iter().map(|f| f.variances[p]).collect(),
        flagged,
    })
}

/// AR order in `0..=pmax` minimising `T ln σ̂²_p + 2p`.
pub fn select_ar_order(x: &[f64], pmax: usize) -> Result<usize> {
    let t = x.len();
    if t <= 3 * pmax {
        return Err(Error::param(format!(
            "order selection up to {pmax} needs more than {} points",
            3 * pmax
        )));
    }
    let fit = yule_walker(x, pmax);
    let aic = |p: usize| t as f64 * fit.variances[p].ln() + 2.0 * p as f64;
    Ok((0..=pmax)
        .min_by(|&a, &b| aic(a).total_cmp(&aic(b)).then(a.cmp(&b)))
        .unwrap())
}

/// Reflection coefficients by the step-down recursion; `None` if a unit-modulus
/// coefficient makes the recursion undefined.
fn step_down(phi: &[f64]) -> Option<Vec<Vec<f64>>> {
    // returns coefficient vectors for orders p, p-1, ..., 1
    let mut levels = vec![phi.to_vec()];
    let mut a = phi.to_vec();
    while !a.is_empty() {
        let m = a.len();
        let k = a[m - 1];
        let denom = 1.0 - k * k;
        if denom == 0.0 {
            return None;
        }
        let lower: Vec<f64> = (0..m - 1).map(|j| (a[j] + k * a[m - 2 - j]) / denom).collect();
        a = lower;
        if !a.is_empty() {
            levels.push(a.clone());
        }
    }
    Some(levels)
}

/// True when all roots of `1 − Σ φ_j zʲ` lie outside the unit circle.
pub fn is_stationary(phi: &[f64]) -> bool {
    match step_down(phi) {
        Some(levels) => levels.iter().all(|a| a.last().is_none_or(|k| k.abs() < 1.0)),
        None => false,
    }
}

/// Drops trailing coefficients until the remaining model is stationary.
pub(crate) fn reduce_to_stationary(phi: &[f64]) -> Vec<f64> {
    let mut q = phi.len();
    while q > 0 && !is_stationary(&phi[..q]) {
        q -= 1;
    }
    phi[..q].to_vec()
}

/// Stationary autocovariances `γ(0..=max_lag)` of an AR process.
pub fn ar_autocovariance(phi: &[f64], sigma2: f64, max_lag: usize) -> Result<Vec<f64>> {
    let p = phi.len();
    let mut a = DMatrix::<f64>::zeros(p + 1, p + 1);
    for h in 0..=p {
        a[(h, h)] += 1.0;
        for (i, &c) in phi.iter().enumerate() {
            let lag = (h as isize - (i as isize + 1)).unsigned_abs();
            a[(h, lag)] -= c;
        }
    }
    let mut rhs = DVector::zeros(p + 1);
    rhs[0] = sigma2;
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::param("AR autocovariance system is singular"))?;
    let mut gamma: Vec<f64> = sol.iter().copied().collect();
    gamma.truncate(max_lag + 1);
    while gamma.len() <= max_lag {
        let h = gamma.len();
        gamma.push((0..p).map(|i| phi[i] * gamma[h - 1 - i]).sum());
    }
    if !(gamma[0] > 0.0) {
        return Err(Error::param("AR model is not stationary"));
    }
    Ok(gamma)
}

/// Averages AR models across runs, then smooths each coefficient map and
/// the innovation-variance map over the surface.
pub fn regularize_ar(models: &[ArModel], smoother: &Smoother) -> Result<ArModel> {
    let first = models
        .first()
        .ok_or_else(|| Error::param("no AR models to regularise"))?;
    let (n, p) = (first.n_vertices(), first.order);
    for m in models {
        if m.order != p || m.n_vertices() != n {
            return Err(Error::DimensionMismatch {
                what: "AR models across runs",
                expected: n * (p + 1),
                found: m.n_vertices() * (m.order + 1),
            });
        }
    }
    let j = models.len() as f64;
    let mean_coef = models
        .iter()
        .fold(DMatrix::zeros(n, p), |acc, m| acc + &m.coefficients)
        / j;
    let mean_var: Vec<f64> = (0..n)
        .map(|v| models.iter().map(|m| m.innovation_var[v]).sum::<f64>() / j)
        .collect();
    let mut coefficients = DMatrix::zeros(n, p);
    for c in 0..p {
        let col: Vec<f64> = mean_coef.column(c).iter().copied().collect();
        let s = smoother.apply(&col)?;
        coefficients.set_column(c, &DVector::from_vec(s));
    }
    Ok(ArModel {
        order: p,
        coefficients,
        innovation_var: smoother.apply(&mean_var)?,
        flagged: (0..n).map(|v| models.iter().any(|m| m.flagged[v])).collect(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::mesh::SurfaceMesh;
    use crate::rng::rng_from;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn simulate_ar(phi: &[f64], t: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from(seed, &[]);
        let burn = 500;
        let mut x = vec![0.0; t + burn];
        for i in 0..t + burn {
            let e: f64 = StandardNormal.sample(&mut rng);
            x[i] = e + phi.iter().enumerate().filter(|(j, _)| i > *j).map(|(j, c)| c * x[i - j - 1]).sum::<f64>();
        }
        x.split_off(burn)
    }

    #[test]
    fn recovers_known_ar_processes() {
        let white = simulate_ar(&[], 20_000, 1);
        let fit = yule_walker(&white, 3);
        assert!(fit.coefficients.iter().all(|c| c.abs() < 0.05));

        let ar1 = simulate_ar(&[0.5], 20_000, 2);
        assert!((yule_walker(&ar1, 1).coefficients[0] - 0.5).abs() < 0.02);

        let ar2 = simulate_ar(&[0.5, -0.3], 20_000, 3);
        let c = yule_walker(&ar2, 2).coefficients;
        assert!((c[0] - 0.5).abs() < 0.02 && (c[1] + 0.3).abs() < 0.02, "{c:?}");
    }

    #[test]
    fn constant_series_is_ridged() {
        let fit = yule_walker(&[3.0; 50], 2);
        assert!(fit.ridged);
        assert!(fit.variances[2] > 0.0);
        let m = fit_ar_yule_walker(&DMatrix::from_element(50, 2, 1.0), 2).unwrap();
        assert!(m.flagged.iter().all(|&f| f));
        assert!(fit_ar_yule_walker(&DMatrix::zeros(6, 1), 2).is_err());
    }

    #[test]
    fn order_selection() {
        assert_eq!(select_ar_order(&simulate_ar(&[], 500, 4), 0).unwrap(), 0);
        for seed in 0..5 {
            let x = simulate_ar(&[0.8], 2000, 10 + seed);
            assert!(select_ar_order(&x, 6).unwrap() >= 1);
        }
        assert!(select_ar_order(&[0.0; 10], 4).is_err());
    }

    #[test]
    fn stationarity_and_reduction() {
        assert!(is_stationary(&[0.5, -0.3]));
        assert!(!is_stationary(&[1.2]));
        assert!(!is_stationary(&[0.5, 0.6]));
        assert_eq!(reduce_to_stationary(&[0.5, 0.6]), vec![0.5]);
        assert_eq!(reduce_to_stationary(&[1.5, 0.1]), Vec::<f64>::new());
    }

    #[test]
    fn autocovariance_of_ar1() {
        let g = ar_autocovariance(&[0.6], 2.0, 3).unwrap();
        let g0 = 2.0 / (1.0 - 0.36);
        for (h, v) in g.iter().enumerate() {
            assert!((v - g0 * 0.6f64.powi(h as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn regularisation_cases() {
        let mesh = SurfaceMesh::grid(4, 4, 1.0).unwrap();
        let ident = Smoother::new(&mesh, 0.0).unwrap();
        let coef = DMatrix::from_fn(16, 2, |v, j| 0.1 * v as f64 - 0.05 * j as f64);
        let m = ArModel {
            order: 2,
            coefficients: coef.clone(),
            innovation_var: (1..=16).map(f64::from).collect(),
            flagged: vec![false; 16],
        };
        assert_eq!(regularize_ar(std::slice::from_ref(&m), &ident).unwrap(), m);

        let neg = ArModel {
            coefficients: -coef,
            ..m.clone()
        };
        let avg = regularize_ar(&[m.clone(), neg], &ident).unwrap();
        assert!(avg.coefficients.iter().all(|&c| c == 0.0));

        let constant = ArModel {
            coefficients: DMatrix::from_element(16, 2, 0.3),
            innovation_var: vec![2.0; 16],
            ..m
        };
        let smooth = Smoother::new(&mesh, 3.0).unwrap();
        let out = regularize_ar(&[constant], &smooth).unwrap();
        assert!(out.coefficients.iter().all(|c| (c - 0.3).abs() < 1e-12));
        assert!(out.innovation_var.iter().all(|c| (c - 2.0).abs() < 1e-12));
    }
}
