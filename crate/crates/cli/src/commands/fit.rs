use std::path::PathBuf;
use std::sync::Arc;

use clap::ValueEnum;
use nalgebra::DMatrix;
use serde::Serialize;
use surfglm::inference::{
    fit_classical_multi, initial_hyperparams, optimize_hyperparams, BayesModel, FieldSelector, OptimizerConfig,
    RunStats,
};
use surfglm::mesh::assemble_fem;
use surfglm::signal::{build_design, preprocess, PreprocessOptions, SessionData, SessionMeta, TaskParadigm};
use surfglm::spde::SpdeOperator;

use crate::error::{CliError, CliResult};
use crate::fitdir::{columns_to_matrix, create_dir, read_mat, read_mesh, write_json, write_mat, FitInfo, FitModel};
use crate::manifest::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Classical,
    Bayes,
}

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    #[arg(long)]
    mesh: PathBuf,
    /// Stimulus timing, lines of `task onset duration` (seconds).
    #[arg(long)]
    paradigm: PathBuf,
    /// BOLD matrix (T × N); repeat for multiple runs.
    #[arg(long = "bold", required = true)]
    bold: Vec<PathBuf>,
    /// Nuisance regressors (T × P), one per run when given.
    #[arg(long = "nuisance")]
    nuisance: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.72)]
    tr: f64,
    /// Only model these tasks (comma separated), in this order.
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,
    #[arg(long, value_enum, default_value_t = Model::Bayes)]
    model: Model,
    #[arg(long, default_value_t = 6)]
    ar_order: usize,
    /// FWHM (mm) for smoothing AR coefficient maps.
    #[arg(long, default_value_t = 6.0)]
    ar_fwhm: f64,
    /// FWHM (mm) for smoothing the BOLD data [default: 6 for classical, 0 for bayes].
    #[arg(long)]
    smooth_fwhm: Option<f64>,
    /// Seed for the optimizer's jittered restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    max_evals: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: Args) -> CliResult<()> {
    if !args.nuisance.is_empty() && args.nuisance.len() != args.bold.len() {
        return Err(CliError::config("give one --nuisance file per --bold run, or none"));
    }
    let mesh = read_mesh(&args.mesh)?;
    let bolds = args.bold.iter().map(|p| read_mat(p)).collect::<CliResult<Vec<_>>>()?;
    let t = bolds[0].nrows();
    if bolds.iter().any(|b| b.nrows() != t) {
        return Err(CliError::config("all runs must have the same number of volumes"));
    }
    let text = std::fs::read_to_string(&args.paradigm)
        .map_err(|e| CliError::config(format!("{}: {e}", args.paradigm.display())))?;
    let order = (!args.tasks.is_empty()).then_some(args.tasks.as_slice());
    let paradigm = match order {
        Some(names) => {
            let full = TaskParadigm::parse(&text, args.tr, t, None)?;
            let mut events = Vec::new();
            for n in names {
                let k = full
                    .task_names
                    .iter()
                    .position(|x| x == n)
                    .ok_or_else(|| CliError::config(format!("task {n:?} not in paradigm")))?;
                events.push(full.events[k].clone());
            }
            TaskParadigm::new(args.tr, t, names.to_vec(), events)?
        }
        None => TaskParadigm::parse(&text, args.tr, t, None)?,
    };
    let design = build_design(&paradigm);
    let sessions = bolds
        .into_iter()
        .enumerate()
        .map(|(j, bold)| {
            let extra = match args.nuisance.get(j) {
                Some(p) => read_mat(p)?,
                None => DMatrix::zeros(t, 0),
            };
            if extra.ncols() > 0 && extra.nrows() != t {
                return Err(CliError::config(format!("nuisance file for run {} has {} rows, expected {t}", j + 1, extra.nrows())));
            }
            let k = design.derivatives.ncols();
            let nuisance = DMatrix::from_fn(t, extra.ncols() + k, |i, c| {
                if c < extra.ncols() { extra[(i, c)] } else { design.derivatives[(i, c - extra.ncols())] }
            });
            let meta = SessionMeta {
                run: format!("run-{}", j + 1),
                ..Default::default()
            };
            Ok(SessionData::new(bold, design.tasks.clone(), nuisance, meta)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let opts = PreprocessOptions {
        ar_order: args.ar_order,
        ar_fwhm: args.ar_fwhm,
        smooth_fwhm: args
            .smooth_fwhm
            .unwrap_or(if args.model == Model::Classical { 6.0 } else { 0.0 }),
    };
    let pre = preprocess(&sessions, &mesh, &opts)?;
    let classical = fit_classical_multi(&pre.whitened)?;

    let out = &args.out;
    create_dir(out)?;
    mesh.write(&out.join("mesh.txt"))?;
    write_json(&out.join("ar.json"), &pre.ar)?;
    let n_runs = sessions.len();
    let mut info = FitInfo {
        model: FitModel::Classical,
        n_vertices: mesh.n_vertices(),
        fields: paradigm.task_names.clone(),
        n_runs,
        dof: None,
        converged: None,
        preprocess: Some(opts),
        n_subjects: None,
    };
    let mut not_converged = None;
    match args.model {
        Model::Classical => {
            info.dof = Some(classical.average.dof);
            write_mat(&out.join("beta.tsv"), &classical.average.beta)?;
            write_mat(&out.join("sd.tsv"), &classical.average.se)?;
            for (j, (fit, cond)) in classical.runs.iter().zip(&pre.conditioned).enumerate() {
                let dir = out.join("runs").join(format!("run-{}", j + 1));
                create_dir(&dir)?;
                write_mat(&dir.join("beta.tsv"), &fit.beta)?;
                write_mat(&dir.join("sd.tsv"), &fit.se)?;
                write_mat(&dir.join("conditioned.tsv"), &cond.bold)?;
                write_mat(&dir.join("design.tsv"), &cond.design)?;
                let valid = DMatrix::from_iterator(cond.valid.len(), 1, cond.valid.iter().map(|v| f64::from(u8::from(*v))));
                write_mat(&dir.join("valid.tsv"), &valid)?;
            }
        }
        Model::Bayes => {
            let op = Arc::new(SpdeOperator::new(assemble_fem(&mesh)?));
            let stats: Vec<RunStats> = pre.whitened.iter().map(RunStats::from_session).collect();
            let model = BayesModel::new(op, stats.clone())?;
            let init = initial_hyperparams(mesh.bounding_diameter(), &classical.runs)?;
            let cfg = OptimizerConfig {
                restarts: args.restarts,
                max_evaluations: args.max_evals,
                seed: args.seed,
                ..Default::default()
            };
            let result = optimize_hyperparams(&model, &init, &cfg)?;
            let post = model.posterior(&result.hyper)?;
            let k = post.n_tasks();
            let avg: Vec<_> = (0..k)
                .map(|task| post.field(&FieldSelector::Average { task }))
                .collect::<Result<_, _>>()?;
            write_mat(&out.join("beta.tsv"), &columns_to_matrix(&avg.iter().map(|f| f.mean()).collect::<Vec<_>>()))?;
            write_mat(&out.join("sd.tsv"), &columns_to_matrix(&avg.iter().map(|f| f.sd()).collect::<Vec<_>>()))?;
            for j in 0..n_runs {
                let dir = out.join("runs").join(format!("run-{}", j + 1));
                create_dir(&dir)?;
                write_mat(&dir.join("beta.tsv"), &columns_to_matrix(&(0..k).map(|a| post.mean(j, a)).collect::<Vec<_>>()))?;
                write_mat(&dir.join("sd.tsv"), &columns_to_matrix(&(0..k).map(|a| post.sd(j, a)).collect::<Vec<_>>()))?;
            }
            write_json(&out.join("theta.json"), &result.hyper)?;
            write_json(&out.join("stats.json"), &stats)?;
            write_json(&out.join("log.json"), &FitLog::new(&result, &init))?;
            info.model = FitModel::Bayes;
            info.converged = Some(result.converged);
            if !result.converged {
                not_converged = Some(format!(
                    "hyperparameter optimizer did not converge in {} evaluations; results written to {}",
                    args.max_evals,
                    out.display()
                ));
            }
        }
    }
    write_json(&out.join("fit.json"), &info)?;
    let mut manifest = Manifest::new("fit", &args)?;
    manifest.input(&args.mesh)?;
    manifest.input(&args.paradigm)?;
    for p in args.bold.iter().chain(&args.nuisance) {
        manifest.input(p)?;
    }
    manifest.finish(out)?;
    match not_converged {
        Some(msg) => Err(CliError::NotConverged(msg)),
        None => Ok(()),
    }
}

/// Optimizer record written to `log.json`.
#[derive(Debug, Serialize)]
struct FitLog<'a> {
    initial: &'a surfglm::inference::Hyperparams,
    converged: bool,
    log_marginal: f64,
    evaluations: usize,
    restarts: &'a [surfglm::inference::RestartSummary],
    trace: &'a [surfglm::inference::TraceEntry],
}

impl<'a> FitLog<'a> {
    fn new(r: &'a surfglm::inference::OptimizationResult, init: &'a surfglm::inference::Hyperparams) -> Self {
        Self {
            initial: init,
            converged: r.converged,
            log_marginal: r.log_marginal,
            evaluations: r.evaluations,
            restarts: &r.restarts,
            trace: &r.trace,
        }
    }
}
