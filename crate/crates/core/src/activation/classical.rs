use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{check_alpha, ActivationMap, Method};
use crate::inference::ClassicalFit;
use crate::{Error, Result};

/// One-sided t statistics `(β̂ − γ) / se` and upper-tail p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct TTest {
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub dof: usize,
    pub gamma: f64,
    /// Vertices with undefined estimates or standard errors (p set to 1).
    pub flagged: Vec<usize>,
}

pub fn ttest(beta: &[f64], se: &[f64], dof: usize, gamma: f64) -> Result<TTest> {
    if beta.len() != se.len() {
        return Err(Error::DimensionMismatch {
            what: "standard errors",
            expected: beta.len(),
            found: se.len(),
        });
    }
    if dof == 0 {
        return Err(Error::param("t-test needs positive degrees of freedom"));
    }
    let dist = StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| Error::param(e.to_string()))?;
    let mut flagged = Vec::new();
    let (t, p) = beta
        .iter()
        .zip(se)
        .enumerate()
        .map(|(v, (&b, &s))| {
            if b.is_finite() && s.is_finite() && s > 0.0 {
                let t = (b - gamma) / s;
                (t, dist.sf(t))
            } else {
                flagged.push(v);
                (f64::NAN, 1.0)
            }
        })
        .unzip();
    Ok(TTest {
        t,
        p,
        dof,
        gamma,
        flagged,
    })
}

pub fn classical_ttest(fit: &ClassicalFit, task: usize, gamma: f64) -> Result<TTest> {
    if task >= fit.n_tasks() {
        return Err(Error::param(format!("no task {task}")));
    }
    let beta: Vec<f64> = fit
        .beta
        .column(task)
        .iter()
        .zip(&fit.defined)
        .map(|(b, d)| if *d { *b } else { f64::NAN })
        .collect();
    let se: Vec<f64> = fit.se.column(task).iter().copied().collect();
    ttest(&beta, &se, fit.dof, gamma)
}

/// Active iff `p·V < α`.
pub fn correct_bonferroni(test: &TTest, alpha: f64) -> Result<ActivationMap> {
    check_alpha(alpha)?;
    let v = test.p.len() as f64;
    let mut map = ActivationMap::new(test.p.iter().map(|p| p * v < alpha).collect(), test.gamma, alpha, Method::Bonferroni);
    map.threshold = Some(alpha / v);
    map.flagged = test.flagged.clone();
    Ok(map)
}

/// Benjamini-Hochberg step-up: with sorted `p₍ℓ₎`, find the largest `ℓ`
/// with `p₍ℓ₎·V/ℓ < α` and declare the `ℓ` smallest p-values active.
pub fn correct_fdr(test: &TTest, alpha: f64) -> Result<ActivationMap> {
    check_alpha(alpha)?;
    let n = test.p.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| test.p[a].total_cmp(&test.p[b]).then(a.cmp(&b)));
    let v = n as f64;
    let cut = (1..=n).rev().find(|&l| test.p[order[l - 1]] * v / (l as f64) < alpha);
    let mut active = vec![false; n];
    if let Some(l) = cut {
        for &i in &order[..l] {
            active[i] = true;
        }
    }
    let mut map = ActivationMap::new(active, test.gamma, alpha, Method::Fdr);
    map.threshold = Some(cut.map_or(0.0, |l| test.p[order[l - 1]]));
    map.flagged = test.flagged.clone();
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn t_values() {
        let t = ttest(&[1.0, 1.3], &[0.1, 0.1], 100, 1.0).unwrap();
        assert_eq!(t.t[0], 0.0);
        assert!((t.p[0] - 0.5).abs() < 1e-12);
        // upper tail of t(100) at 3, by numerical integration of the density
        let tail = {
            let nu = 100.0f64;
            let c = (statrs::function::gamma::ln_gamma((nu + 1.0) / 2.0)
                - statrs::function::gamma::ln_gamma(nu / 2.0))
            .exp()
                / (nu * std::f64::consts::PI).sqrt();
            let f = |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
            let (a, b, m) = (3.0, 60.0, 200_000);
            let h = (b - a) / m as f64;
            (0..=m)
                .map(|i| {
                    let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    w * f(a + i as f64 * h)
                })
                .sum::<f64>()
                * h
                / 3.0
        };
        assert!((t.p[1] - tail).abs() < 1e-9);
        assert!((t.p[1] - 0.0017).abs() < 1e-4);
        let zero = ttest(&[0.3], &[0.1], 20, 0.0).unwrap();
        assert!((zero.t[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn undefined_se_is_flagged() {
        let t = ttest(&[1.0, f64::NAN, 2.0], &[0.0, 1.0, 1.0], 10, 0.0).unwrap();
        assert_eq!(t.flagged, vec![0, 1]);
        assert_eq!(t.p[0], 1.0);
    }

    fn from_p(p: Vec<f64>) -> TTest {
        TTest {
            t: vec![0.0; p.len()],
            p,
            dof: 10,
            gamma: 0.0,
            flagged: vec![],
        }
    }

    #[test]
    fn bonferroni_strict() {
        let a = 0.05;
        let m = correct_bonferroni(&from_p(vec![a / 20.0, a / 10.0, 0.5, 0.9, 1.0, 0.2, 0.3, 0.4, 0.6, 0.7]), a).unwrap();
        assert_eq!(m.active[..2], [true, false]);
        let one = correct_bonferroni(&from_p(vec![0.04]), a).unwrap();
        assert!(one.active[0]);
    }

    #[test]
    fn bh_cases() {
        assert!(correct_fdr(&from_p(vec![0.0; 5]), 0.05).unwrap().active.iter().all(|a| *a));
        assert!(correct_fdr(&from_p(vec![0.01]), 0.05).unwrap().active[0]);
        // step-up: p(3)·4/3 = 0.04 < 0.05 although p(2)·4/2 = 0.05 is not
        let m = correct_fdr(&from_p(vec![0.001, 0.025, 0.03, 0.5]), 0.05).unwrap();
        assert_eq!(m.active, vec![true, true, true, false]);
    }

    proptest! {
        #[test]
        fn bonferroni_within_bh(p in prop::collection::vec(0.0f64..1.0, 1..60), alpha in 0.001f64..0.49) {
            let t = from_p(p);
            let b = correct_bonferroni(&t, alpha).unwrap();
            let f = correct_fdr(&t, alpha).unwrap();
            for (x, y) in b.active.iter().zip(&f.active) {
                prop_assert!(!x || *y);
            }
        }
    }
}
