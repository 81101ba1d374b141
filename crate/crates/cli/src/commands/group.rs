use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::Serialize;
use surfglm::inference::{group_classical, group_posterior, ClassicalFit, GroupContrast};

use crate::error::{CliError, CliResult};
use crate::fitdir::{
    columns_to_matrix, create_dir, subject_posterior, write_json, write_mat, FitDir, FitInfo, FitModel,
};
use crate::manifest::Manifest;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Subject fit directories (all classical or all Bayesian).
    #[arg(long = "fit", required = true)]
    fits: Vec<PathBuf>,
    /// Contrast over tasks as `name=w1,w2,...`; repeatable [default: one
    /// average per task].
    #[arg(long = "contrast")]
    contrasts: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_contrast(s: &str, k: usize) -> CliResult<(String, Vec<f64>)> {
    let (name, w) = s
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("contrast {s:?} is not `name=w1,w2,...`")))?;
    let w: Vec<f64> = w
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::config(format!("contrast {name:?}: {e}")))?;
    if w.len() != k {
        return Err(CliError::config(format!("contrast {name:?} has {} weights for {k} tasks", w.len())));
    }
    Ok((name.to_string(), w))
}

pub fn run(args: Args) -> CliResult<()> {
    let fits = args.fits.iter().map(|p| FitDir::open(p)).collect::<CliResult<Vec<_>>>()?;
    let m = fits.len();
    if m < 2 {
        return Err(CliError::config("group analysis needs at least two subject fits"));
    }
    let first = &fits[0].info;
    let k = first.fields.len();
    let j = first.n_runs;
    if fits.iter().any(|f| f.info.model != first.model || f.info.fields != first.fields || f.info.n_vertices != first.n_vertices) {
        return Err(CliError::config("subject fits differ in model, tasks or vertex count"));
    }
    let contrasts: Vec<(String, Vec<f64>)> = if args.contrasts.is_empty() {
        (0..k)
            .map(|t| (first.fields[t].clone(), (0..k).map(|c| f64::from(u8::from(c == t))).collect()))
            .collect()
    } else {
        args.contrasts.iter().map(|s| parse_contrast(s, k)).collect::<CliResult<_>>()?
    };
    let mesh = fits[0].mesh()?;
    let out = &args.out;
    create_dir(out)?;
    mesh.write(&out.join("mesh.txt"))?;
    let mut info = FitInfo {
        model: FitModel::ClassicalGroup,
        n_vertices: first.n_vertices,
        fields: contrasts.iter().map(|c| c.0.clone()).collect(),
        n_runs: j,
        dof: None,
        converged: None,
        preprocess: None,
        n_subjects: Some(m),
    };
    match first.model {
        FitModel::Classical => {
            let subject = fits
                .iter()
                .map(|f| {
                    let c = f.classical()?;
                    let beta = DMatrix::from_fn(c.n_vertices(), contrasts.len(), |v, i| {
                        (0..k).map(|t| contrasts[i].1[t] * c.beta[(v, t)]).sum()
                    });
                    Ok(ClassicalFit {
                        se: DMatrix::from_element(beta.nrows(), beta.ncols(), f64::NAN),
                        beta,
                        dof: c.dof,
                        residuals: None,
                        sigma2: Vec::new(),
                        defined: c.defined,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            let g = group_classical(&subject)?;
            let mut beta = g.beta.clone();
            let mut se = g.se.clone();
            for v in (0..g.n_vertices()).filter(|&v| !g.defined[v]) {
                beta.row_mut(v).fill(f64::NAN);
                se.row_mut(v).fill(f64::NAN);
            }
            write_mat(&out.join("beta.tsv"), &beta)?;
            write_mat(&out.join("sd.tsv"), &se)?;
            info.dof = Some(g.dof);
        }
        FitModel::Bayes => {
            if fits.iter().any(|f| f.info.n_runs != j) {
                return Err(CliError::config("Bayesian group fits need the same number of runs per subject"));
            }
            let mut subjects = Vec::with_capacity(m);
            for (i, f) in fits.iter().enumerate() {
                let dir = out.join("subjects").join(format!("{:03}", i + 1));
                create_dir(&dir)?;
                for name in ["stats.json", "theta.json"] {
                    std::fs::copy(f.path.join(name), dir.join(name))?;
                }
                subjects.push(subject_posterior(&dir, &mesh)?);
            }
            let w = 1.0 / (m * j) as f64;
            let group: Vec<GroupContrast> = contrasts
                .iter()
                .map(|(_, c)| {
                    let weights = (0..m * j * k).map(|i| c[i % k] * w).collect();
                    GroupContrast::new(m, j, k, weights)
                })
                .collect::<Result<_, _>>()?;
            let posts = group
                .iter()
                .map(|c| group_posterior(&subjects, c))
                .collect::<Result<Vec<_>, _>>()?;
            write_mat(&out.join("beta.tsv"), &columns_to_matrix(&posts.iter().map(|p| p.mean().to_vec()).collect::<Vec<_>>()))?;
            write_mat(&out.join("sd.tsv"), &columns_to_matrix(&posts.iter().map(|p| p.sd()).collect::<Vec<_>>()))?;
            write_json(&out.join("contrasts.json"), &group)?;
            info.model = FitModel::BayesGroup;
        }
        _ => return Err(CliError::config("group inputs must be subject-level fits")),
    }
    write_json(&out.join("fit.json"), &info)?;
    let mut manifest = Manifest::new("group", &args)?;
    for f in &args.fits {
        manifest.input(f)?;
    }
    manifest.finish(out)
}
