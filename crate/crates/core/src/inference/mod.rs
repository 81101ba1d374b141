//! Classical and spatial Bayesian GLMs.
//!
//! Given hyperparameters the Bayesian model is linear-Gaussian, so the latent
//! posterior is exact; hyperparameters are set by maximising the marginal
//! likelihood (empirical Bayes).

mod bayes;
mod classical;
mod field;
mod group;
mod optimize;
mod stats;

pub use bayes::{log_marginal_likelihood, posterior, BayesModel, Hyperparams, PosteriorField};
pub use classical::{fit_classical, fit_classical_multi, group_classical, ols, ClassicalFit, MultiRunClassical, OlsFit};
pub use field::{FieldPosterior, FieldSelector, GaussianBlock};
pub use group::{group_posterior, GroupContrast};
pub use optimize::{
    initial_hyperparams, nelder_mead, optimize_hyperparams, NelderMeadResult, OptimizerConfig,
    OptimizationResult, RestartSummary, TraceEntry,
};
pub use stats::RunStats;
