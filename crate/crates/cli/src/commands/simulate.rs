use std::path::{Path, PathBuf};

use serde::Serialize;
use surfglm::simulate::{SimSpec, SimulatedRun, Simulator};

use crate::error::{CliError, CliResult};
use crate::fitdir::{create_dir, write_json, write_mat};
use crate::manifest::Manifest;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Simulation specification (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the specification.
    #[arg(long)]
    seed: Option<u64>,
}

/// Summary of a written dataset (`dataset.json`).
#[derive(Debug, Serialize)]
struct DatasetInfo {
    tr: f64,
    n_volumes: usize,
    n_vertices: usize,
    tasks: Vec<String>,
    subjects: Vec<String>,
    visits: usize,
    runs: usize,
    population: bool,
    seed: u64,
}

fn write_run(dir: &Path, run: &SimulatedRun) -> CliResult<()> {
    create_dir(dir)?;
    write_mat(&dir.join("bold.tsv"), &run.session.bold)?;
    write_mat(&dir.join("nuisance.tsv"), &run.session.nuisance)?;
    write_mat(&dir.join("beta_true.tsv"), &run.beta)?;
    Ok(())
}

pub fn run(args: Args) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| CliError::config(format!("{}: {e}", args.spec.display())))?;
    let mut spec = SimSpec::from_json(&text)?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let sim = Simulator::new(&spec)?;
    let out = &args.out;
    create_dir(out)?;
    write_json(&out.join("spec.json"), &spec)?;
    sim.mesh().write(&out.join("mesh.txt"))?;
    std::fs::write(out.join("paradigm.txt"), sim.paradigm().to_text())?;
    let population = spec.population.is_some() || spec.visits > 1;
    let mut subjects = Vec::new();
    if population {
        let pop = sim.population()?;
        write_mat(&out.join("group_mean_true.tsv"), &pop.group_mean)?;
        for s in &pop.subjects {
            let sd = out.join(&s.id);
            create_dir(&sd)?;
            write_mat(&sd.join("beta_true.tsv"), &s.beta)?;
            for (v, visit) in s.visits.iter().enumerate() {
                let vd = sd.join(format!("visit-{}", v + 1));
                create_dir(&vd)?;
                write_mat(&vd.join("beta_true.tsv"), &visit.beta)?;
                for (j, r) in visit.runs.iter().enumerate() {
                    write_run(&vd.join(format!("run-{}", j + 1)), r)?;
                }
            }
            subjects.push(s.id.clone());
        }
    } else {
        for m in 0..spec.subjects {
            let runs = sim.subject_runs(m)?;
            let id = runs[0].session.meta.subject.clone();
            for (j, r) in runs.iter().enumerate() {
                write_run(&out.join(&id).join("visit-1").join(format!("run-{}", j + 1)), r)?;
            }
            subjects.push(id);
        }
    }
    let info = DatasetInfo {
        tr: spec.tr,
        n_volumes: spec.n_volumes,
        n_vertices: sim.mesh().n_vertices(),
        tasks: sim.paradigm().task_names.clone(),
        subjects,
        visits: if population { spec.visits } else { 1 },
        runs: spec.runs,
        population,
        seed: spec.seed,
    };
    write_json(&out.join("dataset.json"), &info)?;
    let mut manifest = Manifest::new("simulate", &args)?;
    manifest.input(&args.spec)?;
    manifest.finish(out)
}
