use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bayes::{BayesModel, Hyperparams};
use super::classical::ClassicalFit;
use crate::rng::rng_from;
use crate::spde::SpdeHyper;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Total number of starts, the first at the initial point.
    pub restarts: usize,
    /// Convergence: best value improves by less than this over `d + 1`
    /// consecutive iterations...
    pub tolerance: f64,
    /// ...and the simplex values span less than this.
    pub spread: f64,
    pub max_evaluations: usize,
    /// Half-width of the uniform jitter (log scale) for restarts.
    pub jitter: f64,
    /// Initial simplex edge (log scale).
    pub step: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            tolerance: 1e-6,
            spread: 1e-3,
            max_evaluations: 500,
            jitter: 0.5,
            step: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub evaluation: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// Best value after each iteration.
    pub trace: Vec<TraceEntry>,
}

/// Minimizes `f` with the Nelder-Mead simplex method. Non-finite values are
/// treated as `+∞`. Stops once the best value has improved by less than
/// `tolerance` over `d + 1` iterations while the simplex values span less
/// than `spread`.
pub fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    tolerance: f64,
    spread: f64,
    max_evaluations: usize,
) -> NelderMeadResult {
    let d = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_finite() { v } else { f64::INFINITY }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = eval(&x);
        simplex.push((x, v));
    }
    let by_value = |a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)| a.1.total_cmp(&b.1);
    simplex.sort_by(by_value);
    let mut best_hist = vec![simplex[0].1];
    let mut trace = Vec::new();
    let mut converged = false;

    while evals.get() < max_evaluations {
        let centroid: Vec<f64> = (0..d)
            .map(|c| simplex[..d].iter().map(|(x, _)| x[c]).sum::<f64>() / d as f64)
            .collect();
        let along = |t: f64, worst: &[f64]| -> Vec<f64> {
            centroid.iter().zip(worst).map(|(c, w)| c + t * (c - w)).collect()
        };
        let worst = simplex[d].0.clone();
        let (f_best, f_second, f_worst) = (simplex[0].1, simplex[d - 1].1, simplex[d].1);
        let xr = along(1.0, &worst);
        let fr = eval(&xr);
        if fr < f_best {
            let xe = along(2.0, &worst);
            let fe = eval(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < f_second {
            simplex[d] = (xr, fr);
        } else {
            // outside contraction if the reflection helped at all, else inside
            let xc = along(if fr < f_worst { 0.5 } else { -0.5 }, &worst);
            let fc = eval(&xc);
            if fc < fr.min(f_worst) {
                simplex[d] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = x_best.iter().zip(&p.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    let v = eval(&x);
                    *p = (x, v);
                }
            }
        }
        simplex.sort_by(by_value);
        best_hist.push(simplex[0].1);
        trace.push(TraceEntry {
            evaluation: evals.get(),
            value: simplex[0].1,
        });
        let it = best_hist.len() - 1;
        if it > d && simplex[0].1.is_finite() && best_hist[it - d - 1] - best_hist[it] < tolerance
            && simplex[d].1 - simplex[0].1 < spread
        {
            converged = true;
            break;
        }
    }
    let (x, value) = simplex.swap_remove(0);
    NelderMeadResult {
        x,
        value,
        evaluations: evals.get(),
        converged,
        trace,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub log_marginal: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub hyper: Hyperparams,
    pub log_marginal: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub restarts: Vec<RestartSummary>,
    /// Trace of the winning start, in log-marginal units.
    pub trace: Vec<TraceEntry>,
}

const LOG_BOUND: f64 = 30.0;

/// Empirical Bayes: maximizes the log marginal likelihood over the log
/// hyperparameters from `init` and from jittered copies of it.
pub fn optimize_hyperparams(
    model: &BayesModel,
    init: &Hyperparams,
    cfg: &OptimizerConfig,
) -> Result<OptimizationResult> {
    if cfg.restarts == 0 {
        return Err(Error::param("at least one optimizer start is required"));
    }
    let x0 = init.to_vec();
    if x0.len() != 2 * model.n_tasks() + 1 {
        return Err(Error::DimensionMismatch {
            what: "initial hyperparameters",
            expected: 2 * model.n_tasks() + 1,
            found: x0.len(),
        });
    }
    let objective = |x: &[f64]| -> f64 {
        if x.iter().any(|v| !(v.abs() < LOG_BOUND)) {
            return f64::INFINITY;
        }
        match model.log_marginal_likelihood(&Hyperparams::from_vec(x)) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };
    let starts: Vec<Vec<f64>> = (0..cfg.restarts)
        .map(|r| {
            if r == 0 {
                return x0.clone();
            }
            let mut rng = rng_from(cfg.seed, &[r as u64]);
            x0.iter().map(|v| v + rng.random_range(-cfg.jitter..=cfg.jitter)).collect()
        })
        .collect();
    let runs: Vec<NelderMeadResult> = starts
        .par_iter()
        .map(|s| nelder_mead(objective, s, cfg.step, cfg.tolerance, cfg.spread, cfg.max_evaluations))
        .collect();
    let best = (0..runs.len())
        .min_by(|&a, &b| runs[a].value.total_cmp(&runs[b].value))
        .unwrap();
    let r = &runs[best];
    if !r.value.is_finite() {
        return Err(Error::NotPositiveDefinite {
            index: 0,
            pivot: f64::NAN,
            min_pivot: f64::NAN,
        });
    }
    let restarts = starts
        .iter()
        .zip(&runs)
        .map(|(s, r)| RestartSummary {
            start: s.clone(),
            end: r.x.clone(),
            log_marginal: -r.value,
            evaluations: r.evaluations,
            converged: r.converged,
        })
        .collect();
    if !r.converged {
        log::warn!("hyperparameter optimizer did not converge within {} evaluations", cfg.max_evaluations);
    }
    Ok(OptimizationResult {
        hyper: Hyperparams::from_vec(&r.x),
        log_marginal: -r.value,
        converged: r.converged,
        evaluations: runs.iter().map(|r| r.evaluations).sum(),
        restarts,
        trace: r
            .trace
            .iter()
            .map(|t| TraceEntry {
                evaluation: t.evaluation,
                value: -t.value,
            })
            .collect(),
    })
}

/// Starting point: range a fifth of the mesh diameter, prior variance equal
/// to the spread of the classical estimates, noise variance equal to the
/// classical residual variance.
pub fn initial_hyperparams(diameter: f64, fits: &[ClassicalFit]) -> Result<Hyperparams> {
    let first = fits.first().ok_or_else(|| Error::param("no classical fits"))?;
    if !(diameter > 0.0) {
        return Err(Error::param("mesh diameter must be positive"));
    }
    let kappa = 8f64.sqrt() * 5.0 / diameter;
    let tasks = (0..first.n_tasks())
        .map(|k| {
            let vals: Vec<f64> = fits
                .iter()
                .flat_map(|f| f.beta.column(k).iter().copied().collect::<Vec<_>>())
                .filter(|b| b.is_finite())
                .collect();
            let var = if vals.len() > 1 {
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                vals.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64
            } else {
                1.0
            };
            let var = if var > 1e-8 { var } else { 1.0 };
            SpdeHyper::new(kappa, SpdeHyper::tau_for_variance(kappa, var))
        })
        .collect::<Result<Vec<_>>>()?;
    let s2: Vec<f64> = fits
        .iter()
        .flat_map(|f| f.sigma2.iter().copied())
        .filter(|s| s.is_finite())
        .collect();
    let sigma2 = if s2.is_empty() {
        1.0
    } else {
        (s2.iter().sum::<f64>() / s2.len() as f64).max(1e-8)
    };
    Hyperparams::new(tasks, sigma2)
}
