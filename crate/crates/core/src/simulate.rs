//! Seeded ground-truth generator: meshes, latent fields drawn from the SPDE
//! prior, and BOLD sessions with autoregressive noise.
//!
//! Every random quantity is drawn from its own stream, keyed by the master
//! seed and the entity it belongs to (subject, visit, run, vertex), so output
//! is identical regardless of thread count or which entities are generated.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::EnvelopeCholesky;
use crate::mesh::{assemble_fem, SurfaceMesh};
use crate::rng::rng_from;
use crate::signal::{build_design, ar_autocovariance, Event, SessionData, SessionMeta, TaskParadigm};
use crate::spde::{sample_with_factor, SpdeHyper, SpdeOperator};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeshSpec {
    Grid {
        nx: usize,
        ny: usize,
        #[serde(default = "one_f")]
        spacing: f64,
    },
    Icosphere {
        level: usize,
        #[serde(default = "default_radius")]
        radius: f64,
    },
}

/// SPDE field parameters plus a constant offset added to every draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub kappa: f64,
    pub tau: f64,
    #[serde(default)]
    pub mean: f64,
}

impl FieldSpec {
    /// Parameters giving practical range `range` and marginal sd `sd`.
    pub fn from_range_sd(range: f64, sd: f64) -> Self {
        let kappa = 8f64.sqrt() / range;
        Self {
            kappa,
            tau: SpdeHyper::tau_for_variance(kappa, sd * sd),
            mean: 0.0,
        }
    }

    pub fn hyper(&self) -> Result<SpdeHyper> {
        SpdeHyper::new(self.kappa, self.tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// AR coefficients shared by all vertices (empty for white noise).
    #[serde(default)]
    pub ar: Vec<f64>,
    #[serde(default = "one_f")]
    pub innovation_var: f64,
    /// Per-vertex innovation variances are `innovation_var · exp(h·z)`,
    /// `z ~ N(0, 1)`.
    #[serde(default)]
    pub heterogeneity: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            ar: Vec::new(),
            innovation_var: 1.0,
            heterogeneity: 0.0,
        }
    }
}

/// Subject fields are `group mean + deviation`; each visit adds its own
/// field, shared by that visit's runs. Absent fields are zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    #[serde(default)]
    pub deviation: Option<Vec<FieldSpec>>,
    #[serde(default)]
    pub visit: Option<Vec<FieldSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub mesh: MeshSpec,
    /// Per-task field parameters; for populations, the group-mean field.
    pub tasks: Vec<FieldSpec>,
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default = "one")]
    pub subjects: usize,
    #[serde(default = "one")]
    pub visits: usize,
    pub n_volumes: usize,
    #[serde(default = "default_tr")]
    pub tr: f64,
    /// Explicit `[onset, duration]` events per task; a block design when
    /// absent.
    #[serde(default)]
    pub events: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default = "default_block")]
    pub block_length: f64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_baseline")]
    pub baseline: f64,
    /// Scale of random drift and motion contributions (percent units).
    #[serde(default)]
    pub drift: f64,
    /// Number of synthetic motion regressors.
    #[serde(default)]
    pub motion: usize,
    #[serde(default)]
    pub population: Option<PopulationSpec>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn default_radius() -> f64 {
    50.0
}
fn default_tr() -> f64 {
    0.72
}
fn default_block() -> f64 {
    12.0
}
fn default_baseline() -> f64 {
    10_000.0
}

impl SimSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::param("simulation needs at least one task"));
        }
        if self.runs == 0 || self.subjects == 0 || self.visits == 0 || self.n_volumes < 2 {
            return Err(Error::param("runs, subjects, visits must be >= 1 and n_volumes >= 2"));
        }
        if !(self.baseline > 0.0) || !(self.noise.innovation_var >= 0.0) {
            return Err(Error::param("baseline must be positive and noise variance non-negative"));
        }
        let mut fields: Vec<&FieldSpec> = self.tasks.iter().collect();
        if let Some(p) = &self.population {
            for list in [&p.deviation, &p.visit].into_iter().flatten() {
                if list.len() != self.tasks.len() {
                    return Err(Error::param("population field lists must have one entry per task"));
                }
                fields.extend(list);
            }
        }
        for f in fields {
            f.hyper()?;
        }
        if !self.noise.ar.is_empty() {
            ar_autocovariance(&self.noise.ar, 1.0, 0)?;
        }
        Ok(())
    }
}

pub fn make_mesh(spec: &MeshSpec) -> Result<SurfaceMesh> {
    match *spec {
        MeshSpec::Grid { nx, ny, spacing } => SurfaceMesh::grid(nx, ny, spacing),
        MeshSpec::Icosphere { level, radius } => SurfaceMesh::icosphere(level, radius),
    }
}

/// One simulated run with its true coefficient fields (`N × K`).
#[derive(Debug, Clone)]
pub struct SimulatedRun {
    pub session: SessionData,
    pub beta: DMatrix<f64>,
    pub innovation_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulatedVisit {
    pub beta: DMatrix<f64>,
    pub runs: Vec<SimulatedRun>,
}

#[derive(Debug, Clone)]
pub struct SimulatedSubject {
    pub id: String,
    /// Group mean plus subject deviation.
    pub beta: DMatrix<f64>,
    pub visits: Vec<SimulatedVisit>,
}

#[derive(Debug, Clone)]
pub struct SimulatedPopulation {
    pub group_mean: DMatrix<f64>,
    pub subjects: Vec<SimulatedSubject>,
}

const TAG_RUN_FIELD: u64 = 1;
const TAG_MEAN: u64 = 2;
const TAG_DEVIATION: u64 = 3;
const TAG_VISIT: u64 = 4;
const TAG_NOISE: u64 = 5;
const TAG_HETEROGENEITY: u64 = 6;
const TAG_MOTION: u64 = 7;

struct FieldSampler {
    spec: FieldSpec,
    factor: Arc<EnvelopeCholesky>,
}

/// Prepared simulation: mesh, paradigm, design and prior factors.
pub struct Simulator {
    spec: SimSpec,
    mesh: SurfaceMesh,
    paradigm: TaskParadigm,
    design: DMatrix<f64>,
    tasks: Vec<FieldSampler>,
    deviation: Option<Vec<FieldSampler>>,
    visit: Option<Vec<FieldSampler>>,
}

impl Simulator {
    pub fn new(spec: &SimSpec) -> Result<Self> {
        spec.validate()?;
        let mesh = make_mesh(&spec.mesh)?;
        let op = SpdeOperator::new(assemble_fem(&mesh)?);
        let samplers = |list: &[FieldSpec]| -> Result<Vec<FieldSampler>> {
            list.iter()
                .map(|f| {
                    let q = op.precision(&f.hyper()?);
                    Ok(FieldSampler {
                        spec: *f,
                        factor: Arc::new(EnvelopeCholesky::factor_with(&q, op.ordering().to_vec(), 1)?),
                    })
                })
                .collect()
        };
        let tasks = samplers(&spec.tasks)?;
        let pop = spec.population.clone().unwrap_or_default();
        let deviation = pop.deviation.as_deref().map(samplers).transpose()?;
        let visit = pop.visit.as_deref().map(samplers).transpose()?;
        let paradigm = make_paradigm(spec)?;
        let design = build_design(&paradigm).tasks;
        Ok(Self {
            spec: spec.clone(),
            mesh,
            paradigm,
            design,
            tasks,
            deviation,
            visit,
        })
    }

    pub fn spec(&self) -> &SimSpec {
        &self.spec
    }

    pub fn mesh(&self) -> &SurfaceMesh {
        &self.mesh
    }

    pub fn paradigm(&self) -> &TaskParadigm {
        &self.paradigm
    }

    /// Centred, max-normalised task design shared by all runs.
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    fn fields(&self, samplers: &[FieldSampler], path: &[u64]) -> DMatrix<f64> {
        let n = self.mesh.n_vertices();
        let mut out = DMatrix::zeros(n, samplers.len());
        for (k, s) in samplers.iter().enumerate() {
            let mut p = path.to_vec();
            p.push(k as u64);
            let seed = crate::rng::derive_seed(self.spec.seed, &p);
            let draw = sample_with_factor(&s.factor, 1, seed);
            for v in 0..n {
                out[(v, k)] = draw[(0, v)] + s.spec.mean;
            }
        }
        out
    }

    /// Runs of subject `m` with independent coefficient fields per run, each
    /// drawn from the task prior (the multi-run model's generative form).
    pub fn subject_runs(&self, m: usize) -> Result<Vec<SimulatedRun>> {
        (0..self.spec.runs)
            .map(|j| {
                let beta = self.fields(&self.tasks, &[TAG_RUN_FIELD, m as u64, j as u64]);
                self.run(&beta, m, 0, j)
            })
            .collect()
    }

    /// Runs sharing the given coefficient fields, with independent noise.
    pub fn run(&self, beta: &DMatrix<f64>, m: usize, visit: usize, j: usize) -> Result<SimulatedRun> {
        let (t, n) = (self.spec.n_volumes, self.mesh.n_vertices());
        let signal = &self.design * beta.transpose();
        let var = self.innovation_var(m);
        let nuisance = self.nuisance(m, visit, j);
        let noise = &self.spec.noise;
        let burn = if noise.ar.is_empty() { 0 } else { 200 + 10 * noise.ar.len() };
        let path = [TAG_NOISE, m as u64, visit as u64, j as u64];
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|v| {
                let mut rng = rng_from(self.spec.seed, &[path[0], path[1], path[2], path[3], v as u64]);
                let sd = var[v].sqrt();
                let mut e: Vec<f64> = Vec::with_capacity(t + burn);
                for i in 0..t + burn {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let ar: f64 = noise
                        .ar
                        .iter()
                        .enumerate()
                        .filter(|(l, _)| i > *l)
                        .map(|(l, phi)| phi * e[i - l - 1])
                        .sum();
                    e.push(ar + sd * z);
                }
                let coef: Vec<f64> = (0..nuisance.ncols())
                    .map(|_| self.spec.drift * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect();
                (0..t)
                    .map(|i| {
                        let drift: f64 = coef.iter().enumerate().map(|(c, a)| a * nuisance[(i, c)]).sum();
                        let s = signal[(i, v)] + e[burn + i] + drift;
                        self.spec.baseline * (1.0 + s / 100.0)
                    })
                    .collect()
            })
            .collect();
        let bold = DMatrix::from_fn(t, n, |i, v| cols[v][i]);
        let meta = SessionMeta {
            subject: subject_id(m),
            visit: format!("visit-{}", visit + 1),
            run: format!("run-{}", j + 1),
        };
        Ok(SimulatedRun {
            session: SessionData::new(bold, self.design.clone(), nuisance, meta)?,
            beta: beta.clone(),
            innovation_var: var,
        })
    }

    fn innovation_var(&self, m: usize) -> Vec<f64> {
        let n = self.mesh.n_vertices();
        let noise = &self.spec.noise;
        let mut rng = rng_from(self.spec.seed, &[TAG_HETEROGENEITY, m as u64]);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                noise.innovation_var * (noise.heterogeneity * z).exp()
            })
            .collect()
    }

    /// Linear and quadratic drift plus synthetic motion traces, each centred
    /// with unit peak magnitude.
    fn nuisance(&self, m: usize, visit: usize, j: usize) -> DMatrix<f64> {
        let t = self.spec.n_volumes;
        let mut cols: Vec<Vec<f64>> = vec![
            (0..t).map(|i| i as f64).collect(),
            (0..t).map(|i| (i as f64).powi(2)).collect(),
        ];
        let mut rng = rng_from(self.spec.seed, &[TAG_MOTION, m as u64, visit as u64, j as u64]);
        for _ in 0..self.spec.motion {
            let mut x = 0.0;
            cols.push(
                (0..t)
                    .map(|_| {
                        x = 0.9 * x + rng.random_range(-1.0..1.0);
                        x
                    })
                    .collect(),
            );
        }
        for c in cols.iter_mut() {
            let mean = c.iter().sum::<f64>() / t as f64;
            c.iter_mut().for_each(|v| *v -= mean);
            let peak = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if peak > 0.0 {
                c.iter_mut().for_each(|v| *v /= peak);
            }
        }
        DMatrix::from_fn(t, cols.len(), |i, c| cols[c][i])
    }

    pub fn population(&self) -> Result<SimulatedPopulation> {
        let n = self.mesh.n_vertices();
        let k = self.tasks.len();
        let group_mean = self.fields(&self.tasks, &[TAG_MEAN]);
        let subjects = (0..self.spec.subjects)
            .into_par_iter()
            .map(|m| {
                let beta = match &self.deviation {
                    Some(d) => &group_mean + self.fields(d, &[TAG_DEVIATION, m as u64]),
                    None => group_mean.clone(),
                };
                let visits = (0..self.spec.visits)
                    .map(|vis| {
                        let vb = match &self.visit {
                            Some(s) => &beta + self.fields(s, &[TAG_VISIT, m as u64, vis as u64]),
                            None => beta.clone(),
                        };
                        let runs = (0..self.spec.runs)
                            .map(|j| self.run(&vb, m, vis, j))
                            .collect::<Result<Vec<_>>>()?;
                        Ok(SimulatedVisit { beta: vb, runs })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(SimulatedSubject {
                    id: subject_id(m),
                    beta,
                    visits,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        debug_assert!(group_mean.shape() == (n, k));
        Ok(SimulatedPopulation { group_mean, subjects })
    }
}

fn subject_id(m: usize) -> String {
    format!("sub-{:03}", m + 1)
}

/// Explicit events, or a block design cycling through the tasks with one
/// rest block per cycle.
pub fn make_paradigm(spec: &SimSpec) -> Result<TaskParadigm> {
    let k = spec.tasks.len();
    let span = spec.tr * spec.n_volumes as f64;
    let events: Vec<Vec<Event>> = match &spec.events {
        Some(ev) => {
            if ev.len() != k {
                return Err(Error::param("explicit events need one list per task"));
            }
            ev.iter()
                .map(|l| l.iter().map(|&[onset, duration]| Event { onset, duration }).collect())
                .collect()
        }
        None => {
            let b = spec.block_length;
            if !(b > 0.0) {
                return Err(Error::param("block length must be positive"));
            }
            let period = b * (k + 1) as f64;
            (0..k)
                .map(|task| {
                    let mut list = Vec::new();
                    let mut onset = b * task as f64;
                    while onset + b <= span {
                        list.push(Event { onset, duration: b });
                        onset += period;
                    }
                    list
                })
                .collect()
        }
    };
    TaskParadigm::new(
        spec.tr,
        spec.n_volumes,
        (0..k).map(|i| format!("task{}", i + 1)).collect(),
        events,
    )
}

/// Simulates a single run (subject 1, run 1) with fields drawn from the prior.
pub fn simulate_session(spec: &SimSpec) -> Result<SimulatedRun> {
    let sim = Simulator::new(spec)?;
    Ok(sim.subject_runs(0)?.swap_remove(0))
}

pub fn simulate_population(spec: &SimSpec) -> Result<SimulatedPopulation> {
    Simulator::new(spec)?.population()
}

/// Empirical variance of each column's entries around zero; a test helper
/// for comparing sampled fields against prior variances.
pub fn mean_square(x: &DMatrix<f64>, col: usize) -> f64 {
    let c: DVector<f64> = x.column(col).into();
    c.norm_squared() / c.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::fit_classical;
    use crate::linalg::dense_spd_inverse;
    use crate::signal::{condition, WhitenedSession};

    fn spec() -> SimSpec {
        SimSpec {
            mesh: MeshSpec::Grid { nx: 6, ny: 5, spacing: 2.0 },
            tasks: vec![FieldSpec::from_range_sd(6.0, 1.0), FieldSpec::from_range_sd(4.0, 0.5)],
            runs: 2,
            subjects: 1,
            visits: 1,
            n_volumes: 120,
            tr: 0.72,
            events: None,
            block_length: 12.0,
            noise: NoiseSpec::default(),
            baseline: 10_000.0,
            drift: 0.0,
            motion: 0,
            population: None,
            seed: 42,
        }
    }

    #[test]
    fn json_defaults() {
        let s = SimSpec::from_json(
            r#"{"mesh": {"kind": "icosphere", "level": 1}, "tasks": [{"kappa": 0.5, "tau": 1.0}], "n_volumes": 50}"#,
        )
        .unwrap();
        assert_eq!(s.runs, 1);
        assert_eq!(s.noise, NoiseSpec::default());
        assert_eq!(make_mesh(&s.mesh).unwrap().n_vertices(), 42);
        assert!(SimSpec::from_json(r#"{"mesh": {"kind": "grid", "nx": 3, "ny": 3}, "tasks": [{"kappa": -1, "tau": 1}], "n_volumes": 10}"#).is_err());
    }

    #[test]
    fn mesh_specs() {
        assert_eq!(make_mesh(&MeshSpec::Grid { nx: 2, ny: 2, spacing: 1.0 }).unwrap().n_triangles(), 2);
        assert_eq!(make_mesh(&MeshSpec::Icosphere { level: 0, radius: 1.0 }).unwrap().n_triangles(), 20);
        assert_eq!(make_mesh(&MeshSpec::Grid { nx: 7, ny: 4, spacing: 1.0 }).unwrap().n_vertices(), 28);
    }

    #[test]
    fn zero_noise_is_recovered_exactly() {
        let mut s = spec();
        s.noise.innovation_var = 0.0;
        s.drift = 0.5;
        s.motion = 2;
        let run = simulate_session(&s).unwrap();
        let c = condition(&run.session).unwrap();
        let fit = fit_classical(&WhitenedSession::unwhitened(&c)).unwrap();
        assert!((fit.beta.clone() - &run.beta).amax() < 1e-8);
    }

    #[test]
    fn huge_tau_gives_flat_fields() {
        let mut s = spec();
        s.tasks = vec![FieldSpec { kappa: 0.5, tau: 1e8, mean: 0.0 }];
        let run = simulate_session(&s).unwrap();
        assert!(run.beta.amax() < 1e-5);
    }

    #[test]
    fn field_variance_matches_prior() {
        let s = SimSpec {
            mesh: MeshSpec::Grid { nx: 10, ny: 10, spacing: 1.0 },
            tasks: vec![FieldSpec { kappa: 0.8, tau: 0.6, mean: 0.0 }],
            ..spec()
        };
        let sim = Simulator::new(&s).unwrap();
        let op = SpdeOperator::new(assemble_fem(sim.mesh()).unwrap());
        let cov = dense_spd_inverse(&op.precision(&s.tasks[0].hyper().unwrap()).to_dense()).unwrap();
        let target = cov.diagonal().mean();
        let reps = 400;
        let ms: Vec<f64> = (0..reps)
            .map(|r| mean_square(&sim.fields(&sim.tasks, &[99, r]), 0))
            .collect();
        let mean = ms.iter().sum::<f64>() / reps as f64;
        let sd = (ms.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!((mean - target).abs() < 4.0 * sd / (reps as f64).sqrt(), "{mean} vs {target}");
    }

    #[test]
    fn deterministic_and_entity_keyed() {
        let mut s = spec();
        s.noise.ar = vec![0.4];
        let a = Simulator::new(&s).unwrap().subject_runs(0).unwrap();
        let b = Simulator::new(&s).unwrap().subject_runs(0).unwrap();
        assert_eq!(a[1].session.bold, b[1].session.bold);
        assert_ne!(a[0].beta, a[1].beta);
        s.subjects = 3;
        s.runs = 1;
        s.visits = 2;
        s.population = Some(PopulationSpec::default());
        let p = simulate_population(&s).unwrap();
        assert_eq!(p.subjects[0].beta, p.subjects[2].beta);
        assert_eq!(p.subjects[1].visits[0].beta, p.subjects[1].visits[1].beta);
        assert_ne!(p.subjects[1].visits[0].runs[0].session.bold, p.subjects[1].visits[1].runs[0].session.bold);
        s.subjects = 2;
        let q = simulate_population(&s).unwrap();
        assert_eq!(q.subjects[1].visits[1].runs[0].session.bold, p.subjects[1].visits[1].runs[0].session.bold);
    }

    #[test]
    fn block_paradigm_fits() {
        let p = make_paradigm(&spec()).unwrap();
        assert_eq!(p.n_tasks(), 2);
        assert!(p.events.iter().all(|e| !e.is_empty()));
        assert_eq!(p.events[1][0].onset, 12.0);
    }
}
