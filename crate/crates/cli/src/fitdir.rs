use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use surfglm::inference::{
    group_posterior, BayesModel, ClassicalFit, FieldPosterior, FieldSelector, GroupContrast, Hyperparams,
    PosteriorField, RunStats,
};
use surfglm::io::{read_estimates, read_matrix, write_matrix};
use surfglm::mesh::{assemble_fem, SurfaceMesh};
use surfglm::signal::{prewhiten, ArModel, PreprocessOptions, SessionData, WhitenedSession};
use surfglm::spde::SpdeOperator;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    Classical,
    Bayes,
    ClassicalGroup,
    BayesGroup,
}

/// Contents of `fit.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitInfo {
    pub model: FitModel,
    pub n_vertices: usize,
    /// Column labels of `beta.tsv` and `sd.tsv`.
    pub fields: Vec<String>,
    pub n_runs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_subjects: Option<usize>,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_mat(path: &Path) -> CliResult<DMatrix<f64>> {
    read_matrix(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn read_est(path: &Path) -> CliResult<DMatrix<f64>> {
    read_estimates(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn read_mesh(path: &Path) -> CliResult<SurfaceMesh> {
    SurfaceMesh::read(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))
}

pub struct FitDir {
    pub path: PathBuf,
    pub info: FitInfo,
}

impl FitDir {
    pub fn open(path: &Path) -> CliResult<Self> {
        if !path.is_dir() {
            return Err(CliError::config(format!("fit directory {} not found", path.display())));
        }
        Ok(Self {
            path: path.to_path_buf(),
            info: read_json(&path.join("fit.json"))?,
        })
    }

    pub fn mesh(&self) -> CliResult<SurfaceMesh> {
        read_mesh(&self.path.join("mesh.txt"))
    }

    pub fn beta(&self) -> CliResult<DMatrix<f64>> {
        read_est(&self.path.join("beta.tsv"))
    }

    pub fn sd(&self) -> CliResult<DMatrix<f64>> {
        read_est(&self.path.join("sd.tsv"))
    }

    pub fn field_index(&self, name: &str) -> CliResult<usize> {
        self.info
            .fields
            .iter()
            .position(|f| f == name)
            .or_else(|| name.parse::<usize>().ok().filter(|&i| i >= 1 && i <= self.info.fields.len()).map(|i| i - 1))
            .ok_or_else(|| CliError::config(format!("no field {name:?} in {}", self.path.display())))
    }

    /// Classical estimates with their degrees of freedom.
    pub fn classical(&self) -> CliResult<ClassicalFit> {
        let dof = match self.info.model {
            FitModel::Classical | FitModel::ClassicalGroup => self.info.dof.unwrap_or(0),
            _ => return Err(CliError::config(format!("{} is not a classical fit", self.path.display()))),
        };
        let beta = self.beta()?;
        let se = self.sd()?;
        let defined = (0..beta.nrows()).map(|v| beta.row(v).iter().all(|b| b.is_finite())).collect();
        Ok(ClassicalFit {
            beta,
            se,
            dof,
            residuals: None,
            sigma2: Vec::new(),
            defined,
        })
    }

    /// Field posteriors, one per column of `beta.tsv`.
    pub fn field_posteriors(&self) -> CliResult<Vec<FieldPosterior>> {
        match self.info.model {
            FitModel::Bayes => {
                let post = subject_posterior(&self.path, &self.mesh()?)?;
                (0..post.n_tasks())
                    .map(|k| Ok(post.field(&FieldSelector::Average { task: k })?))
                    .collect()
            }
            FitModel::BayesGroup => {
                let mesh = self.mesh()?;
                let m = self.info.n_subjects.unwrap_or(0);
                let subjects = (0..m)
                    .map(|i| subject_posterior(&self.path.join("subjects").join(format!("{:03}", i + 1)), &mesh))
                    .collect::<CliResult<Vec<_>>>()?;
                let contrasts: Vec<GroupContrast> = read_json(&self.path.join("contrasts.json"))?;
                contrasts
                    .iter()
                    .map(|c| Ok(group_posterior(&subjects, c)?))
                    .collect()
            }
            _ => Err(CliError::config(format!("{} is not a Bayesian fit", self.path.display()))),
        }
    }

    /// Prewhitened runs stacked in time, for permutation testing.
    pub fn whitened_stacked(&self) -> CliResult<WhitenedSession> {
        if self.info.model != FitModel::Classical {
            return Err(CliError::config("permutation testing needs a subject-level classical fit"));
        }
        let ar: ArModel = read_json(&self.path.join("ar.json"))?;
        let mut runs = Vec::new();
        for j in 0..self.info.n_runs {
            let dir = self.path.join("runs").join(format!("run-{}", j + 1));
            let bold = read_mat(&dir.join("conditioned.tsv"))?;
            let design = read_mat(&dir.join("design.tsv"))?;
            let valid: Vec<bool> = read_mat(&dir.join("valid.tsv"))?.iter().map(|v| *v != 0.0).collect();
            let t = bold.nrows();
            let mut s = SessionData::new(bold, design, DMatrix::zeros(t, 0), Default::default())?;
            s.percent_signal = true;
            s.valid = valid;
            runs.push(prewhiten(&s, &ar)?);
        }
        let first = runs.remove(0);
        Ok(runs.into_iter().fold(first, |mut acc, r| {
            acc.y = stack(&acc.y, &r.y);
            for (a, b) in acc.designs.iter_mut().zip(&r.designs) {
                *a = stack(a, b);
            }
            for (a, b) in acc.valid.iter_mut().zip(&r.valid) {
                *a &= *b;
            }
            acc
        }))
    }
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, c) = a.shape();
    DMatrix::from_fn(ra + b.nrows(), c, |i, j| if i < ra { a[(i, j)] } else { b[(i - ra, j)] })
}

/// Rebuilds a subject posterior from `stats.json` and `theta.json`.
pub fn subject_posterior(dir: &Path, mesh: &SurfaceMesh) -> CliResult<PosteriorField> {
    let stats: Vec<RunStats> = read_json(&dir.join("stats.json"))?;
    let theta: Hyperparams = read_json(&dir.join("theta.json"))?;
    let op = Arc::new(SpdeOperator::new(assemble_fem(mesh)?));
    let model = BayesModel::new(op, stats)?;
    Ok(model.posterior(&theta)?)
}

pub fn write_mat(path: &Path, m: &DMatrix<f64>) -> CliResult<()> {
    Ok(write_matrix(path, m)?)
}

pub fn columns_to_matrix(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}
