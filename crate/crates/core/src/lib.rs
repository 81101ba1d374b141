//! Surface-based spatial Bayesian GLM for task fMRI on triangulated meshes.
//!
//! The crate is organised as a pipeline:
//!
//! - [`mesh`]: triangulated surfaces, linear finite-element matrices, graph
//!   smoothing and edge-distortion analysis.
//! - [`signal`]: task design construction, percent-signal-change conditioning,
//!   nuisance regression, autoregressive noise models and prewhitening.
//! - [`spde`]: the SPDE Matérn prior (sparse precision, sampling, Matérn
//!   covariance).
//! - [`inference`]: the classical vertex-wise GLM and the spatial Bayesian GLM
//!   (single-run, multi-run and group) with empirical-Bayes hyperparameters.
//! - [`activation`]: excursion sets and classical multiplicity corrections.
//! - [`reliability`]: ICC, Dice and proxy-accuracy metrics.
//! - [`simulate`]: a seeded generator of meshes, fields and BOLD sessions.
//!
//! [`linalg`] holds the sparse matrix and envelope Cholesky machinery shared by
//! the prior and the posterior.

pub mod activation;
pub mod error;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod reliability;
pub mod rng;
pub mod signal;
pub mod simulate;
pub mod spde;

pub use error::{Error, Result};
