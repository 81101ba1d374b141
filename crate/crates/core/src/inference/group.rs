use serde::{Deserialize, Serialize};

use super::bayes::PosteriorField;
use super::field::FieldPosterior;
use crate::{Error, Result};

/// Weights over every subject, run and task, laid out `m·J·K + j·K + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupContrast {
    pub n_subjects: usize,
    pub n_runs: usize,
    pub n_tasks: usize,
    pub weights: Vec<f64>,
}

impl GroupContrast {
    pub fn new(n_subjects: usize, n_runs: usize, n_tasks: usize, weights: Vec<f64>) -> Result<Self> {
        let len = n_subjects * n_runs * n_tasks;
        if weights.len() != len {
            return Err(Error::DimensionMismatch {
                what: "group contrast weights",
                expected: len,
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::param("contrast weights must be finite"));
        }
        Ok(Self {
            n_subjects,
            n_runs,
            n_tasks,
            weights,
        })
    }

    /// Population average of one task: `1/(M·J)` on that task for every
    /// subject and run.
    pub fn task_average(n_subjects: usize, n_runs: usize, n_tasks: usize, task: usize) -> Result<Self> {
        if task >= n_tasks {
            return Err(Error::param(format!("no task {task}")));
        }
        let w = 1.0 / (n_subjects * n_runs) as f64;
        let weights = (0..n_subjects * n_runs * n_tasks)
            .map(|i| if i % n_tasks == task { w } else { 0.0 })
            .collect();
        Self::new(n_subjects, n_runs, n_tasks, weights)
    }
}

/// Posterior of a linear combination of subject-level fields. Subjects and
/// runs are independent given their hyperparameters, so the combination's
/// covariance is the weighted sum of the block covariances.
pub fn group_posterior(subjects: &[PosteriorField], contrast: &GroupContrast) -> Result<FieldPosterior> {
    if subjects.len() != contrast.n_subjects {
        return Err(Error::DimensionMismatch {
            what: "subjects",
            expected: contrast.n_subjects,
            found: subjects.len(),
        });
    }
    let jk = contrast.n_runs * contrast.n_tasks;
    let mut terms = Vec::new();
    for (m, s) in subjects.iter().enumerate() {
        if s.n_runs() != contrast.n_runs || s.n_tasks() != contrast.n_tasks {
            return Err(Error::DimensionMismatch {
                what: "subject runs x tasks",
                expected: jk,
                found: s.n_runs() * s.n_tasks(),
            });
        }
        terms.extend(s.terms(&contrast.weights[m * jk..(m + 1) * jk]));
    }
    if terms.is_empty() {
        return Err(Error::param("group contrast has no non-zero weights"));
    }
    FieldPosterior::new(terms)
}
