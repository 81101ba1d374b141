use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{condition, fit_ar_yule_walker, prewhiten, regularize_ar, ArModel, SessionData, WhitenedSession};
use crate::inference::fit_classical;
use crate::mesh::{Smoother, SurfaceMesh};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub ar_order: usize,
    /// FWHM (mm) for smoothing the run-averaged AR maps.
    pub ar_fwhm: f64,
    /// FWHM (mm) for spatially smoothing the BOLD data; 0 disables.
    pub smooth_fwhm: f64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            ar_order: 6,
            ar_fwhm: 6.0,
            smooth_fwhm: 0.0,
        }
    }
}

/// Conditioned runs, the shared noise model and the prewhitened runs.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub conditioned: Vec<SessionData>,
    pub ar: ArModel,
    pub whitened: Vec<WhitenedSession>,
}

/// Conditions each run, optionally smooths it, fits AR models to the
/// residuals of an initial least-squares fit, averages and smooths them
/// across runs, and prewhitens every run with the result.
pub fn preprocess(runs: &[SessionData], mesh: &SurfaceMesh, opts: &PreprocessOptions) -> Result<Preprocessed> {
    if runs.is_empty() {
        return Err(Error::param("no runs to preprocess"));
    }
    for r in runs {
        if r.n_vertices() != mesh.n_vertices() {
            return Err(Error::DimensionMismatch {
                what: "BOLD columns vs mesh vertices",
                expected: mesh.n_vertices(),
                found: r.n_vertices(),
            });
        }
    }
    let smoother = (opts.smooth_fwhm > 0.0)
        .then(|| Smoother::new(mesh, opts.smooth_fwhm))
        .transpose()?;
    let conditioned = runs
        .iter()
        .map(|r| {
            let mut c = condition(r)?;
            if let Some(s) = &smoother {
                c.bold = s.apply_rows(&c.bold)?;
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let models = conditioned
        .par_iter()
        .map(|c| {
            let fit = fit_classical(&WhitenedSession::unwhitened(c))?;
            let res: DMatrix<f64> = fit.residuals.expect("single-run fit keeps residuals");
            fit_ar_yule_walker(&res, opts.ar_order)
        })
        .collect::<Result<Vec<_>>>()?;
    let ar = regularize_ar(&models, &Smoother::new(mesh, opts.ar_fwhm)?)?;
    let whitened = conditioned
        .iter()
        .map(|c| prewhiten(c, &ar))
        .collect::<Result<Vec<_>>>()?;
    Ok(Preprocessed {
        conditioned,
        ar,
        whitened,
    })
}
