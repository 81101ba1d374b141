//! Activation detection: Bayesian excursion sets and classical thresholded
//! t-tests with multiplicity correction.

mod classical;
mod excursion;
mod permutation;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use classical::{classical_ttest, correct_bonferroni, correct_fdr, ttest, TTest};
pub use excursion::{excursion_set, excursion_sets, marginal_exceedance, ExcursionConfig};
pub use permutation::correct_permutation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Excursion,
    Bonferroni,
    Fdr,
    Permutation,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Excursion => "excursion",
            Method::Bonferroni => "bonferroni",
            Method::Fdr => "fdr",
            Method::Permutation => "permutation",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "excursion" => Ok(Method::Excursion),
            "bonferroni" => Ok(Method::Bonferroni),
            "fdr" => Ok(Method::Fdr),
            "permutation" => Ok(Method::Permutation),
            _ => Err(Error::param(format!("unknown activation method {s:?}"))),
        }
    }
}

/// Binary activation per vertex at one `(γ, α)`, with how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMap {
    #[serde(skip)]
    pub active: Vec<bool>,
    pub gamma: f64,
    pub alpha: f64,
    pub method: Method,
    pub seed: Option<u64>,
    /// Number of vertices tested (classical) or candidates (excursion).
    pub n_tested: usize,
    /// Statistic threshold: p-value cut-off (Bonferroni, FDR) or max-t
    /// quantile (permutation).
    pub threshold: Option<f64>,
    /// Estimated joint exceedance probability of the returned set.
    pub joint_probability: Option<f64>,
    /// Monte Carlo draws or permutations.
    pub draws: Option<usize>,
    pub tie_break: Option<String>,
    /// Vertices whose statistic was undefined (treated as p = 1).
    pub flagged: Vec<usize>,
}

impl ActivationMap {
    pub(crate) fn new(active: Vec<bool>, gamma: f64, alpha: f64, method: Method) -> Self {
        Self {
            n_tested: active.len(),
            active,
            gamma,
            alpha,
            method,
            seed: None,
            threshold: None,
            joint_probability: None,
            draws: None,
            tie_break: None,
            flagged: Vec::new(),
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.active.len()
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&v| self.active[v]).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("vertex\tactive\n");
        for (v, a) in self.active.iter().enumerate() {
            s.push_str(&format!("{v}\t{}\n", u8::from(*a)));
        }
        s
    }

    pub fn parse_tsv(text: &str) -> Result<Vec<bool>> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let mut f = line.split('\t');
            let (v, a) = (f.next(), f.next());
            let v: usize = v
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::parse(i + 1, "expected vertex index"))?;
            if v != out.len() {
                return Err(Error::parse(i + 1, "vertices must be listed in order"));
            }
            match a.map(str::trim) {
                Some("0") => out.push(false),
                Some("1") => out.push(true),
                _ => return Err(Error::parse(i + 1, "expected 0 or 1")),
            }
        }
        Ok(out)
    }

    /// Writes `active.tsv` and `meta.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("active.tsv"), self.to_tsv())?;
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let mut map: Self = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        map.active = Self::parse_tsv(&std::fs::read_to_string(dir.join("active.tsv"))?)?;
        Ok(map)
    }
}

/// Activation over two independently analysed components (hemispheres).
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedMap {
    /// Left vertices followed by right vertices.
    pub active: Vec<bool>,
    /// Family-wise level over both components, `1 − (1 − α)²`.
    pub level: f64,
}

pub fn whole_domain_level(alpha: f64) -> f64 {
    1.0 - (1.0 - alpha).powi(2)
}

pub fn combine_hemispheres(left: &ActivationMap, right: &ActivationMap, alpha: f64) -> Result<CombinedMap> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::param(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    Ok(CombinedMap {
        active: left.active.iter().chain(&right.active).copied().collect(),
        level: whole_domain_level(alpha),
    })
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::param(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    Ok(())
}
