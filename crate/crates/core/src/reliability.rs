//! Test-retest reliability: ICC, Dice overlap and accuracy against a proxy.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::rng::rng_from;
use crate::{Error, Result};

/// Variance decomposition behind one ICC value (variances with `1/n`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Icc {
    pub value: f64,
    pub sigma_t2: f64,
    pub sigma_w2: f64,
    pub sigma_b2: f64,
    /// Total variance was zero; the ICC is reported as 0.
    pub flagged: bool,
}

fn var_n(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = x.clone().count() as f64;
    let mean = x.clone().sum::<f64>() / n;
    x.map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn same_len(a: usize, b: usize, what: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { what, expected: a, found: b });
    }
    Ok(())
}

/// ICC of paired visits: `σ_t² = ½(var B₁ + var B₂)`, `σ_w² = ½ var(B₁ − B₂)`,
/// `σ_b² = σ_t² − σ_w²`, `ICC = σ_b²/σ_t²` with negatives truncated to 0.
pub fn icc(visit1: &[f64], visit2: &[f64]) -> Result<Icc> {
    same_len(visit1.len(), visit2.len(), "paired visits")?;
    if visit1.len() < 2 {
        return Err(Error::param("ICC needs at least two subjects"));
    }
    if visit1.iter().chain(visit2).any(|v| !v.is_finite()) {
        return Err(Error::param("ICC inputs must be finite"));
    }
    let sigma_t2 = 0.5 * (var_n(visit1.iter().copied()) + var_n(visit2.iter().copied()));
    let sigma_w2 = 0.5 * var_n(visit1.iter().zip(visit2).map(|(a, b)| a - b));
    let sigma_b2 = sigma_t2 - sigma_w2;
    let flagged = !(sigma_t2 > 0.0);
    let value = if flagged { 0.0 } else { (sigma_b2 / sigma_t2).clamp(0.0, 1.0) };
    Ok(Icc {
        value,
        sigma_t2,
        sigma_w2,
        sigma_b2,
        flagged,
    })
}

/// ICC at every column of two `M × N` matrices (subjects × vertices).
pub fn icc_map(visit1: &DMatrix<f64>, visit2: &DMatrix<f64>) -> Result<Vec<Icc>> {
    if visit1.shape() != visit2.shape() {
        return Err(Error::DimensionMismatch {
            what: "visit matrices",
            expected: visit1.len(),
            found: visit2.len(),
        });
    }
    (0..visit1.ncols())
        .into_par_iter()
        .map(|v| {
            let a: Vec<f64> = visit1.column(v).iter().copied().collect();
            let b: Vec<f64> = visit2.column(v).iter().copied().collect();
            icc(&a, &b)
        })
        .collect()
}

/// Share of masked vertices rated fair `[0.4, 0.6)`, good `[0.6, 0.75)` and
/// excellent `[0.75, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityBins {
    pub fair: f64,
    pub good: f64,
    pub excellent: f64,
    pub n: usize,
}

pub fn icc_quality_bins(values: &[f64], mask: Option<&[bool]>) -> Result<QualityBins> {
    if let Some(m) = mask {
        same_len(values.len(), m.len(), "ICC mask")?;
    }
    let kept: Vec<f64> = values
        .iter()
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, v)| *v)
        .collect();
    let n = kept.len();
    let share = |lo: f64, hi: f64, closed: bool| {
        if n == 0 {
            return 0.0;
        }
        kept.iter().filter(|&&v| v >= lo && (v < hi || (closed && v <= hi))).count() as f64 / n as f64
    };
    Ok(QualityBins {
        fair: share(0.4, 0.6, false),
        good: share(0.6, 0.75, false),
        excellent: share(0.75, 1.0, true),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dice {
    pub value: f64,
    /// Both maps were empty; reported as 1.
    pub flagged: bool,
}

/// `2|A ∩ B| / (|A| + |B|)`.
pub fn dice(a: &[bool], b: &[bool]) -> Result<Dice> {
    same_len(a.len(), b.len(), "activation maps")?;
    let both = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    Ok(if total == 0 {
        Dice { value: 1.0, flagged: true }
    } else {
        Dice {
            value: 2.0 * both as f64 / total as f64,
            flagged: false,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyAccuracy {
    pub mse: f64,
    /// NaN when either input is constant over the mask.
    pub pearson: f64,
    pub n: usize,
}

pub fn proxy_accuracy(est: &[f64], proxy: &[f64], mask: Option<&[bool]>) -> Result<ProxyAccuracy> {
    same_len(est.len(), proxy.len(), "proxy")?;
    if let Some(m) = mask {
        same_len(est.len(), m.len(), "proxy mask")?;
    }
    let pairs: Vec<(f64, f64)> = (0..est.len())
        .filter(|&i| mask.is_none_or(|m| m[i]))
        .map(|i| (est[i], proxy[i]))
        .collect();
    let n = pairs.len();
    if n == 0 {
        return Err(Error::param("proxy accuracy over an empty mask"));
    }
    let nf = n as f64;
    let mse = pairs.iter().map(|(a, b)| (a - b).powi(2)).sum::<f64>() / nf;
    let (ma, mb) = (
        pairs.iter().map(|p| p.0).sum::<f64>() / nf,
        pairs.iter().map(|p| p.1).sum::<f64>() / nf,
    );
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma).powi(2);
        sbb += (b - mb).powi(2);
    }
    let pearson = if saa > 0.0 && sbb > 0.0 {
        (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
    } else {
        f64::NAN
    };
    Ok(ProxyAccuracy { mse, pearson, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub mean: f64,
    pub t: f64,
    /// Two-sided paired t-test p-value.
    pub p: f64,
    pub dof: usize,
    /// Differences had zero variance; `p` is reported as 1.
    pub flagged: bool,
}

/// Mean of `b − c` over subjects with a two-sided paired t-test.
pub fn paired_dice_difference(b: &[f64], c: &[f64]) -> Result<PairedDifference> {
    same_len(b.len(), c.len(), "paired Dice values")?;
    let n = b.len();
    if n < 2 {
        return Err(Error::param("paired test needs at least two subjects"));
    }
    let d: Vec<f64> = b.iter().zip(c).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let dof = n - 1;
    if !(var > 0.0) {
        return Ok(PairedDifference {
            mean,
            t: f64::NAN,
            p: 1.0,
            dof,
            flagged: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::param(e.to_string()))?;
    Ok(PairedDifference {
        mean,
        t,
        p: (2.0 * dist.sf(t.abs())).min(1.0),
        dof,
        flagged: false,
    })
}

/// Percentile bootstrap interval for `stat` at confidence `level`.
pub fn bootstrap_ci(
    values: &[f64],
    stat: impl Fn(&[f64]) -> f64 + Sync,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if values.is_empty() || n_boot == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::param("bootstrap needs data, replicates and a level in (0, 1)"));
    }
    let mut stats: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from(seed, &[b as u64]);
            let sample: Vec<f64> = (0..values.len())
                .map(|_| values[rng.random_range(0..values.len())])
                .collect();
            stat(&sample)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let q = |p: f64| stats[((p * n_boot as f64).floor() as usize).min(n_boot - 1)];
    Ok((q((1.0 - level) / 2.0), q((1.0 + level) / 2.0)))
}

/// One row of a metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub vertex: Option<usize>,
    pub task: String,
    pub metric: String,
    pub value: f64,
}

/// TSV with header `vertex task metric value`; summary rows use `-` as the
/// vertex.
pub fn metrics_tsv(rows: &[MetricRow]) -> String {
    let mut s = String::from("vertex\ttask\tmetric\tvalue\n");
    for r in rows {
        let v = r.vertex.map_or_else(|| "-".to_string(), |v| v.to_string());
        s.push_str(&format!("{v}\t{}\t{}\t{}\n", r.task, r.metric, r.value));
    }
    s
}
