use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::linalg::EnvelopeCholesky;
use crate::{Error, Result};

/// Gaussian posterior of one run's latent fields, stored vertex-major
/// (`index = v·K + k`) as a mean and a factored precision.
#[derive(Debug, Clone)]
pub struct GaussianBlock {
    n_vertices: usize,
    n_tasks: usize,
    mean: Vec<f64>,
    factor: EnvelopeCholesky,
    /// Within-vertex `K × K` posterior covariances, `N·K·K`.
    vertex_cov: Vec<f64>,
}

impl GaussianBlock {
    /// The factor must keep each vertex's `K` latent values in one dense block.
    pub fn new(mean: Vec<f64>, factor: EnvelopeCholesky, n_vertices: usize, n_tasks: usize) -> Result<Self> {
        let dim = n_vertices * n_tasks;
        if mean.len() != dim || factor.dim() != dim {
            return Err(Error::DimensionMismatch {
                what: "posterior block",
                expected: dim,
                found: factor.dim(),
            });
        }
        let sinv = factor.selected_inverse();
        let k = n_tasks;
        let mut vertex_cov = Vec::with_capacity(n_vertices * k * k);
        for v in 0..n_vertices {
            for a in 0..k {
                for b in 0..k {
                    let s = sinv
                        .get(v * k + a, v * k + b)
                        .ok_or_else(|| Error::param("posterior factor does not cover vertex blocks"))?;
                    vertex_cov.push(s);
                }
            }
        }
        Ok(Self {
            n_vertices,
            n_tasks,
            mean,
            factor,
            vertex_cov,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn factor(&self) -> &EnvelopeCholesky {
        &self.factor
    }

    pub fn task_mean(&self, k: usize) -> Vec<f64> {
        (0..self.n_vertices).map(|v| self.mean[v * self.n_tasks + k]).collect()
    }

    pub fn task_variance(&self, k: usize) -> Vec<f64> {
        let kk = self.n_tasks;
        (0..self.n_vertices)
            .map(|v| self.vertex_cov[v * kk * kk + k * kk + k])
            .collect()
    }

    /// Posterior covariance of the `K` values at vertex `v` (row-major).
    pub fn vertex_covariance(&self, v: usize) -> &[f64] {
        let kk = self.n_tasks * self.n_tasks;
        &self.vertex_cov[v * kk..(v + 1) * kk]
    }

    /// Full posterior covariance; small problems only.
    pub fn dense_covariance(&self) -> DMatrix<f64> {
        let n = self.factor.dim();
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                self.factor.solve(&e)
            })
            .collect();
        DMatrix::from_fn(n, n, |i, j| cols[j][i])
    }
}

/// Which linear combination of latent fields to extract.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSelector {
    Run { run: usize, task: usize },
    /// Average over runs for one task.
    Average { task: usize },
    /// Arbitrary weights, run-major (`run·K + task`).
    Contrast { weights: Vec<f64> },
}

/// Posterior of a single spatial field `Σ wᵢ βᵢ`, where each term is a task
/// combination within one independent Gaussian block.
#[derive(Debug, Clone)]
pub struct FieldPosterior {
    n_vertices: usize,
    terms: Vec<(Arc<GaussianBlock>, Vec<f64>)>,
}

impl FieldPosterior {
    pub fn new(terms: Vec<(Arc<GaussianBlock>, Vec<f64>)>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::param("field combination has no terms"))?;
        let n = first.0.n_vertices();
        for (b, w) in &terms {
            if b.n_vertices() != n {
                return Err(Error::DimensionMismatch {
                    what: "field vertices",
                    expected: n,
                    found: b.n_vertices(),
                });
            }
            if w.len() != b.n_tasks() {
                return Err(Error::DimensionMismatch {
                    what: "task weights",
                    expected: b.n_tasks(),
                    found: w.len(),
                });
            }
        }
        Ok(Self { n_vertices: n, terms })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_vertices];
        for (b, w) in &self.terms {
            let k = b.n_tasks();
            for (v, o) in out.iter_mut().enumerate() {
                *o += w.iter().enumerate().map(|(t, wt)| wt * b.mean[v * k + t]).sum::<f64>();
            }
        }
        out
    }

    pub fn variance(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_vertices];
        for (b, w) in &self.terms {
            let k = b.n_tasks();
            for (v, o) in out.iter_mut().enumerate() {
                let c = b.vertex_covariance(v);
                for a in 0..k {
                    for d in 0..k {
                        *o += w[a] * c[a * k + d] * w[d];
                    }
                }
            }
        }
        out
    }

    pub fn sd(&self) -> Vec<f64> {
        self.variance().into_iter().map(f64::sqrt).collect()
    }

    /// Posterior covariance restricted to `vertices`, by one solve per vertex
    /// and term.
    pub fn covariance_subset(&self, vertices: &[usize]) -> DMatrix<f64> {
        let m = vertices.len();
        let mut cov = DMatrix::zeros(m, m);
        for (b, w) in &self.terms {
            let k = b.n_tasks();
            let dim = b.factor.dim();
            let cols: Vec<Vec<f64>> = vertices
                .par_iter()
                .map(|&s| {
                    let mut rhs = vec![0.0; dim];
                    rhs[s * k..(s + 1) * k].copy_from_slice(w);
                    let x = b.factor.solve(&rhs);
                    vertices
                        .iter()
                        .map(|&t| (0..k).map(|a| w[a] * x[t * k + a]).sum())
                        .collect()
                })
                .collect();
            for (j, col) in cols.iter().enumerate() {
                for (i, c) in col.iter().enumerate() {
                    cov[(i, j)] += c;
                }
            }
        }
        // symmetrize against round-off in the solves
        (&cov + cov.transpose()) * 0.5
    }

    pub fn dense_covariance(&self) -> DMatrix<f64> {
        let all: Vec<usize> = (0..self.n_vertices).collect();
        self.covariance_subset(&all)
    }
}
