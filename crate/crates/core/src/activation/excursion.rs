use nalgebra::DMatrix;
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{check_alpha, ActivationMap, Method};
use crate::inference::FieldPosterior;
use crate::rng::rng_from;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcursionConfig {
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for ExcursionConfig {
    fn default() -> Self {
        Self { n_mc: 50_000, seed: 0 }
    }
}

const CHUNK: usize = 1024;
pub(crate) const TIE_BREAK: &str = "decreasing marginal probability, then increasing vertex index";

/// `P(β_v > γ)` for independent Gaussian marginals.
pub fn marginal_exceedance(mean: &[f64], sd: &[f64], gamma: f64) -> Vec<f64> {
    let std = Normal::standard();
    mean.iter()
        .zip(sd)
        .map(|(&m, &s)| {
            if s > 0.0 {
                std.cdf((m - gamma) / s)
            } else if m > gamma {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Largest excursion set at level `1 − α`: vertices are ranked by marginal
/// exceedance probability and the longest prefix whose joint probability
/// `P(min β > γ)` is at least `1 − α` is kept. The joint probabilities come
/// from seeded Monte Carlo draws of the posterior restricted to the vertices
/// whose marginal probability alone reaches `1 − α`.
pub fn excursion_set(field: &FieldPosterior, gamma: f64, alpha: f64, cfg: &ExcursionConfig) -> Result<ActivationMap> {
    check_alpha(alpha)?;
    if cfg.n_mc < 10_000 {
        return Err(Error::param(format!("excursion sets need at least 10000 draws, got {}", cfg.n_mc)));
    }
    let mean = field.mean();
    let sd = field.sd();
    let marg = marginal_exceedance(&mean, &sd, gamma);
    let mut cand: Vec<usize> = (0..mean.len()).filter(|&v| marg[v] >= 1.0 - alpha).collect();
    cand.sort_by(|&a, &b| marg[b].total_cmp(&marg[a]).then(a.cmp(&b)));

    let mut map = ActivationMap::new(vec![false; mean.len()], gamma, alpha, Method::Excursion);
    map.seed = Some(cfg.seed);
    map.draws = Some(cfg.n_mc);
    map.tie_break = Some(TIE_BREAK.into());
    map.n_tested = cand.len();
    if cand.is_empty() {
        map.joint_probability = Some(1.0);
        return Ok(map);
    }
    let cov = field.covariance_subset(&cand);
    let mu: Vec<f64> = cand.iter().map(|&v| mean[v]).collect();
    let (m, joint) = longest_prefix(&mu, cov, gamma, alpha, cfg)?;
    for &v in &cand[..m] {
        map.active[v] = true;
    }
    map.joint_probability = Some(joint);
    Ok(map)
}

/// Excursion sets for ascending thresholds. Each level is computed with the
/// same seed and then intersected with the previous one, so the sets are
/// nested exactly.
pub fn excursion_sets(
    field: &FieldPosterior,
    gammas: &[f64],
    alpha: f64,
    cfg: &ExcursionConfig,
) -> Result<Vec<ActivationMap>> {
    if gammas.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::param("thresholds must be ascending"));
    }
    let mut out: Vec<ActivationMap> = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let mut map = excursion_set(field, g, alpha, cfg)?;
        if let Some(prev) = out.last() {
            for (a, p) in map.active.iter_mut().zip(&prev.active) {
                *a &= *p;
            }
        }
        out.push(map);
    }
    Ok(out)
}

/// Returns the prefix length and its estimated joint probability. Draws are
/// generated one coordinate at a time through the Cholesky factor and
/// stopped at the first coordinate at or below `γ`; the histogram of these
/// first failures gives every prefix probability in one pass.
fn longest_prefix(
    mu: &[f64],
    mut cov: DMatrix<f64>,
    gamma: f64,
    alpha: f64,
    cfg: &ExcursionConfig,
) -> Result<(usize, f64)> {
    let m = mu.len();
    let scale = cov.diagonal().iter().sum::<f64>() / m as f64;
    let mut jitter = 0.0;
    let l = loop {
        if let Some(c) = cov.clone().cholesky() {
            break c.l();
        }
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 10.0 };
        if jitter > 1e-6 * scale {
            return Err(Error::NotPositiveDefinite {
                index: 0,
                pivot: f64::NAN,
                min_pivot: jitter,
            });
        }
        for i in 0..m {
            cov[(i, i)] += jitter;
        }
    };
    let n_chunks = cfg.n_mc.div_ceil(CHUNK);
    let hist = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from(cfg.seed, &[c as u64]);
            let mut hist = vec![0u64; m + 1];
            let mut z = vec![0.0; m];
            for _ in 0..CHUNK.min(cfg.n_mc - c * CHUNK) {
                let mut fail = m;
                for i in 0..m {
                    z[i] = StandardNormal.sample(&mut rng);
                    let row = l.row(i);
                    let x = mu[i] + (0..=i).map(|j| row[j] * z[j]).sum::<f64>();
                    if x <= gamma {
                        fail = i;
                        break;
                    }
                }
                hist[fail] += 1;
            }
            hist
        })
        .reduce(
            || vec![0u64; m + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    // joint(k) = P(first failure index >= k)
    let n = cfg.n_mc as f64;
    let mut survive = cfg.n_mc as u64;
    let mut best = (0, 1.0);
    for (k, &h) in hist.iter().enumerate().take(m) {
        survive -= h;
        let joint = survive as f64 / n;
        if joint >= 1.0 - alpha {
            best = (k + 1, joint);
        } else {
            break;
        }
    }
    Ok(best)
}
