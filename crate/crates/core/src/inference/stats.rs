use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::signal::WhitenedSession;

/// Per-vertex sufficient statistics of one prewhitened run: `XᵀX`, `Xᵀy`,
/// `yᵀy`. Invalid vertices contribute nothing to the likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub n_vertices: usize,
    pub n_tasks: usize,
    /// Number of scalar observations (`T` times the number of valid vertices).
    pub n_obs: usize,
    /// `N·K·K`, row-major within each vertex.
    pub xtx: Vec<f64>,
    /// `N·K`, vertex-major.
    pub xty: Vec<f64>,
    pub yty: Vec<f64>,
    pub valid: Vec<bool>,
}

impl RunStats {
    pub fn from_session(s: &WhitenedSession) -> Self {
        let (t, n) = s.y.shape();
        let k = s.n_tasks();
        let per_vertex: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..n)
            .into_par_iter()
            .map(|v| {
                if !s.valid[v] {
                    return (vec![0.0; k * k], vec![0.0; k], 0.0);
                }
                let x = &s.designs[v];
                let y = s.y.column(v);
                let xtx = x.transpose() * x;
                let xty = x.transpose() * y;
                (
                    (0..k * k).map(|e| xtx[(e / k, e % k)]).collect(),
                    xty.iter().copied().collect(),
                    y.norm_squared(),
                )
            })
            .collect();
        let mut xtx = Vec::with_capacity(n * k * k);
        let mut xty = Vec::with_capacity(n * k);
        let mut yty = Vec::with_capacity(n);
        for (a, b, c) in per_vertex {
            xtx.extend(a);
            xty.extend(b);
            yty.push(c);
        }
        let n_valid = s.valid.iter().filter(|v| **v).count();
        Self {
            n_vertices: n,
            n_tasks: k,
            n_obs: t * n_valid,
            xtx,
            xty,
            yty,
            valid: s.valid.clone(),
        }
    }

    pub fn xtx_at(&self, v: usize) -> &[f64] {
        let kk = self.n_tasks * self.n_tasks;
        &self.xtx[v * kk..(v + 1) * kk]
    }

    pub fn yty_total(&self) -> f64 {
        self.yty.iter().sum()
    }
}
