//! Task design, data conditioning, autoregressive noise models and
//! prewhitening.

mod ar;
mod condition;
mod design;
mod pipeline;
mod whiten;

pub use ar::{
    ar_autocovariance, fit_ar_yule_walker, is_stationary, regularize_ar, select_ar_order,
    yule_walker, ArModel, YuleWalkerFit,
};
pub use condition::condition;
pub use design::{build_design, canonical_hrf, task_regressor, Design, Event, TaskParadigm};
pub use pipeline::{preprocess, PreprocessOptions, Preprocessed};
pub use whiten::{prewhiten, whiten_series, WhitenedSession};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub subject: String,
    pub visit: String,
    pub run: String,
}

/// One run of data: BOLD (`T × N`), shared task design (`T × K`) and nuisance
/// regressors (`T × P`).
#[derive(Debug, Clone)]
pub struct SessionData {
    pub bold: DMatrix<f64>,
    pub design: DMatrix<f64>,
    pub nuisance: DMatrix<f64>,
    pub meta: SessionMeta,
    /// BOLD already expressed as percent signal change.
    pub percent_signal: bool,
    /// Vertices excluded from analysis (non-positive mean intensity).
    pub valid: Vec<bool>,
}

impl SessionData {
    pub fn new(
        bold: DMatrix<f64>,
        design: DMatrix<f64>,
        nuisance: DMatrix<f64>,
        meta: SessionMeta,
    ) -> Result<Self> {
        let t = bold.nrows();
        if design.nrows() != t {
            return Err(Error::DimensionMismatch {
                what: "design rows",
                expected: t,
                found: design.nrows(),
            });
        }
        if nuisance.nrows() != t && nuisance.ncols() != 0 {
            return Err(Error::DimensionMismatch {
                what: "nuisance rows",
                expected: t,
                found: nuisance.nrows(),
            });
        }
        if bold.iter().chain(design.iter()).chain(nuisance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::param("session contains non-finite values"));
        }
        if design.ncols() == 0 {
            return Err(Error::param("design has no task columns"));
        }
        let nuisance = if nuisance.ncols() == 0 {
            DMatrix::zeros(t, 0)
        } else {
            nuisance
        };
        Ok(Self {
            valid: vec![true; bold.ncols()],
            bold,
            design,
            nuisance,
            meta,
            percent_signal: false,
        })
    }

    pub fn n_volumes(&self) -> usize {
        self.bold.nrows()
    }

    pub fn n_vertices(&self) -> usize {
        self.bold.ncols()
    }

    pub fn n_tasks(&self) -> usize {
        self.design.ncols()
    }
}
