use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{FieldPosterior, FieldSelector, GaussianBlock};
use super::stats::RunStats;
use crate::linalg::{EnvelopeCholesky, SparseMatrix};
use crate::spde::{SpdeHyper, SpdeOperator};
use crate::{Error, Result};

/// SPDE hyperparameters per task and the shared noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub tasks: Vec<SpdeHyper>,
    pub log_sigma2: f64,
}

impl Hyperparams {
    pub fn new(tasks: Vec<SpdeHyper>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::param(format!("noise variance must be positive, got {sigma2}")));
        }
        Ok(Self {
            tasks,
            log_sigma2: sigma2.ln(),
        })
    }

    pub fn sigma2(&self) -> f64 {
        self.log_sigma2.exp()
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// `[log κ₁, log τ₁, …, log κ_K, log τ_K, log σ²]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .tasks
            .iter()
            .flat_map(|h| [h.log_kappa, h.log_tau])
            .collect();
        v.push(self.log_sigma2);
        v
    }

    pub fn from_vec(v: &[f64]) -> Self {
        assert!(v.len() % 2 == 1, "parameter vector must have length 2K + 1");
        let k = v.len() / 2;
        Self {
            tasks: (0..k).map(|i| SpdeHyper::from_log(v[2 * i], v[2 * i + 1])).collect(),
            log_sigma2: v[2 * k],
        }
    }
}

/// Pattern of a run's posterior precision and where each prior and data term
/// lands in its value array.
#[derive(Debug, Clone)]
struct BlockLayout {
    pattern: SparseMatrix,
    /// `[task][entry of Q pattern]`.
    q_pos: Vec<Vec<usize>>,
    /// `[v·K·K + a·K + b]`.
    x_pos: Vec<usize>,
    perm: Vec<usize>,
}

impl BlockLayout {
    fn new(op: &SpdeOperator, k: usize) -> Self {
        let n = op.n();
        let q = op.pattern();
        let mut trip = Vec::with_capacity(q.nnz() * k + n * k * k);
        for t in 0..k {
            trip.extend(q.triplets().map(|(i, j, _)| (i * k + t, j * k + t, 0.0)));
        }
        for v in 0..n {
            for a in 0..k {
                for b in 0..k {
                    trip.push((v * k + a, v * k + b, 0.0));
                }
            }
        }
        let pattern = SparseMatrix::from_triplets(n * k, n * k, &trip);
        let pos = |i: usize, j: usize| pattern.position(i, j).expect("entry in block pattern");
        let q_pos = (0..k)
            .map(|t| q.triplets().map(|(i, j, _)| pos(i * k + t, j * k + t)).collect())
            .collect();
        let mut x_pos = Vec::with_capacity(n * k * k);
        for v in 0..n {
            for a in 0..k {
                for b in 0..k {
                    x_pos.push(pos(v * k + a, v * k + b));
                }
            }
        }
        let perm = op
            .ordering()
            .iter()
            .flat_map(|&old| (0..k).map(move |t| old * k + t))
            .collect();
        Self {
            pattern,
            q_pos,
            x_pos,
            perm,
        }
    }
}

/// The spatial Bayesian GLM for one subject: a mesh prior and the sufficient
/// statistics of each prewhitened run. Runs share hyperparameters but have
/// independent latent fields.
#[derive(Debug, Clone)]
pub struct BayesModel {
    op: Arc<SpdeOperator>,
    runs: Vec<RunStats>,
    n_tasks: usize,
    layout: BlockLayout,
}

struct PriorFactors {
    q_values: Vec<Vec<f64>>,
    log_det: f64,
}

impl BayesModel {
    pub fn new(op: Arc<SpdeOperator>, runs: Vec<RunStats>) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::param("no runs to fit"))?;
        let k = first.n_tasks;
        if k == 0 {
            return Err(Error::param("design has no task regressors"));
        }
        for r in &runs {
            if r.n_vertices != op.n() {
                return Err(Error::DimensionMismatch {
                    what: "run vertices vs mesh",
                    expected: op.n(),
                    found: r.n_vertices,
                });
            }
            if r.n_tasks != k {
                return Err(Error::DimensionMismatch {
                    what: "tasks per run",
                    expected: k,
                    found: r.n_tasks,
                });
            }
        }
        let layout = BlockLayout::new(&op, k);
        Ok(Self {
            op,
            runs,
            n_tasks: k,
            layout,
        })
    }

    pub fn operator(&self) -> &Arc<SpdeOperator> {
        &self.op
    }

    pub fn runs(&self) -> &[RunStats] {
        &self.runs
    }

    pub fn n_vertices(&self) -> usize {
        self.op.n()
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }

    fn check(&self, h: &Hyperparams) -> Result<()> {
        if h.n_tasks() != self.n_tasks {
            return Err(Error::DimensionMismatch {
                what: "hyperparameter tasks",
                expected: self.n_tasks,
                found: h.n_tasks(),
            });
        }
        if h.to_vec().iter().any(|v| !v.is_finite()) {
            return Err(Error::param("hyperparameters must be finite"));
        }
        Ok(())
    }

    fn prior(&self, h: &Hyperparams) -> Result<PriorFactors> {
        let mut q_values = Vec::with_capacity(self.n_tasks);
        let mut log_det = 0.0;
        for th in &h.tasks {
            let q = self.op.precision(th);
            let f = EnvelopeCholesky::factor_with(&q, self.op.ordering().to_vec(), 1)?;
            log_det += f.log_det();
            q_values.push(q.values().to_vec());
        }
        Ok(PriorFactors { q_values, log_det })
    }

    fn run_precision(&self, run: usize, prior: &PriorFactors, sigma2: f64) -> SparseMatrix {
        let l = &self.layout;
        let mut vals = vec![0.0; l.pattern.nnz()];
        for (pos, qv) in l.q_pos.iter().zip(&prior.q_values) {
            for (&p, &v) in pos.iter().zip(qv) {
                vals[p] += v;
            }
        }
        for (&p, &x) in l.x_pos.iter().zip(&self.runs[run].xtx) {
            vals[p] += x / sigma2;
        }
        l.pattern.with_values(vals)
    }

    fn run_posterior(&self, run: usize, prior: &PriorFactors, sigma2: f64) -> Result<(EnvelopeCholesky, Vec<f64>, Vec<f64>)> {
        let p = self.run_precision(run, prior, sigma2);
        let f = EnvelopeCholesky::factor_with(&p, self.layout.perm.clone(), self.n_tasks)?;
        let b: Vec<f64> = self.runs[run].xty.iter().map(|x| x / sigma2).collect();
        let mu = f.solve(&b);
        Ok((f, mu, b))
    }

    /// Log marginal likelihood of the whitened data, `log p(y | θ)`.
    pub fn log_marginal_likelihood(&self, h: &Hyperparams) -> Result<f64> {
        self.check(h)?;
        let prior = self.prior(h)?;
        let s2 = h.sigma2();
        let per_run: Vec<Result<f64>> = (0..self.runs.len())
            .into_par_iter()
            .map(|j| {
                let r = &self.runs[j];
                let (f, mu, b) = self.run_posterior(j, &prior, s2)?;
                let quad: f64 = b.iter().zip(&mu).map(|(x, m)| x * m).sum();
                Ok(-0.5 * r.n_obs as f64 * (2.0 * PI * s2).ln() + 0.5 * prior.log_det
                    - 0.5 * f.log_det()
                    - 0.5 * r.yty_total() / s2
                    + 0.5 * quad)
            })
            .collect();
        per_run.into_iter().sum()
    }

    /// Exact latent posterior given the hyperparameters.
    pub fn posterior(&self, h: &Hyperparams) -> Result<PosteriorField> {
        self.check(h)?;
        let prior = self.prior(h)?;
        let s2 = h.sigma2();
        let (n, k) = (self.n_vertices(), self.n_tasks);
        let blocks = (0..self.runs.len())
            .into_par_iter()
            .map(|j| {
                let (f, mu, _) = self.run_posterior(j, &prior, s2)?;
                Ok(Arc::new(GaussianBlock::new(mu, f, n, k)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorField {
            hyper: h.clone(),
            blocks,
        })
    }
}

pub fn log_marginal_likelihood(model: &BayesModel, h: &Hyperparams) -> Result<f64> {
    model.log_marginal_likelihood(h)
}

pub fn posterior(model: &BayesModel, h: &Hyperparams) -> Result<PosteriorField> {
    model.posterior(h)
}

/// Posterior of all latent fields of one subject: one independent block per
/// run.
#[derive(Debug, Clone)]
pub struct PosteriorField {
    pub hyper: Hyperparams,
    blocks: Vec<Arc<GaussianBlock>>,
}

impl PosteriorField {
    pub fn blocks(&self) -> &[Arc<GaussianBlock>] {
        &self.blocks
    }

    pub fn n_runs(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.blocks[0].n_tasks()
    }

    pub fn n_vertices(&self) -> usize {
        self.blocks[0].n_vertices()
    }

    pub fn field(&self, sel: &FieldSelector) -> Result<FieldPosterior> {
        let (j, k) = (self.n_runs(), self.n_tasks());
        let weights = match sel {
            FieldSelector::Run { run, task } => {
                if *run >= j || *task >= k {
                    return Err(Error::param(format!("no field for run {run}, task {task}")));
                }
                let mut w = vec![0.0; j * k];
                w[run * k + task] = 1.0;
                w
            }
            FieldSelector::Average { task } => {
                if *task >= k {
                    return Err(Error::param(format!("no task {task}")));
                }
                let mut w = vec![0.0; j * k];
                for r in 0..j {
                    w[r * k + task] = 1.0 / j as f64;
                }
                w
            }
            FieldSelector::Contrast { weights } => {
                if weights.len() != j * k {
                    return Err(Error::DimensionMismatch {
                        what: "contrast weights",
                        expected: j * k,
                        found: weights.len(),
                    });
                }
                weights.clone()
            }
        };
        FieldPosterior::new(self.terms(&weights))
    }

    pub(crate) fn terms(&self, weights: &[f64]) -> Vec<(Arc<GaussianBlock>, Vec<f64>)> {
        let k = self.n_tasks();
        self.blocks
            .iter()
            .enumerate()
            .filter_map(|(r, b)| {
                let w = weights[r * k..(r + 1) * k].to_vec();
                w.iter().any(|x| *x != 0.0).then(|| (Arc::clone(b), w))
            })
            .collect()
    }

    /// Posterior mean of run `run`, task `task`.
    pub fn mean(&self, run: usize, task: usize) -> Vec<f64> {
        self.blocks[run].task_mean(task)
    }

    pub fn sd(&self, run: usize, task: usize) -> Vec<f64> {
        self.blocks[run].task_variance(task).into_iter().map(f64::sqrt).collect()
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::classical::fit_classical;
    use crate::linalg::{dense_gaussian_logpdf, dense_spd_inverse};
    use crate::mesh::{assemble_fem, SurfaceMesh};
    use crate::rng::rng_from;
    use crate::signal::{SessionMeta, WhitenedSession};
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn toy_sessions(n: usize, t: usize, k: usize, j: usize, seed: u64) -> Vec<WhitenedSession> {
        let mut rng = rng_from(seed, &[]);
        (0..j)
            .map(|_| {
                let base = DMatrix::from_fn(t, k, |_, _| rng.random_range(-1.0..1.0));
                let designs: Vec<DMatrix<f64>> = (0..n)
                    .map(|_| base.map(|x| x + 0.1 * rng.random_range(-1.0..1.0)))
                    .collect();
                let y = DMatrix::from_fn(t, n, |_, _| StandardNormal.sample(&mut rng));
                WhitenedSession {
                    y,
                    designs,
                    valid: vec![true; n],
                    reduced: vec![false; n],
                    meta: SessionMeta::default(),
                }
            })
            .collect()
    }

    fn model(nx: usize, ny: usize, sessions: &[WhitenedSession]) -> BayesModel {
        let mesh = SurfaceMesh::grid(nx, ny, 1.0).unwrap();
        let op = Arc::new(SpdeOperator::new(assemble_fem(&mesh).unwrap()));
        BayesModel::new(op, sessions.iter().map(RunStats::from_session).collect()).unwrap()
    }

    fn hyper() -> Hyperparams {
        Hyperparams::new(
            vec![SpdeHyper::new(0.8, 0.7).unwrap(), SpdeHyper::new(1.3, 0.4).unwrap()],
            0.9,
        )
        .unwrap()
    }

    /// Dense oracle: stack every run, vertex and time point into one linear
    /// model `y = Xβ + ε` with `β ~ N(0, blockdiag Q⁻¹)`.
    struct Dense {
        x: DMatrix<f64>,
        y: DVector<f64>,
        prior_cov: DMatrix<f64>,
    }

    fn dense(m: &BayesModel, sessions: &[WhitenedSession], h: &Hyperparams) -> Dense {
        let (n, k, j) = (m.n_vertices(), m.n_tasks(), sessions.len());
        let t = sessions[0].n_volumes();
        let mut x = DMatrix::zeros(j * t * n, j * k * n);
        let mut y = DVector::zeros(j * t * n);
        for (r, s) in sessions.iter().enumerate() {
            for v in 0..n {
                for i in 0..t {
                    let row = r * t * n + v * t + i;
                    y[row] = s.y[(i, v)];
                    for a in 0..k {
                        x[(row, r * k * n + v * k + a)] = s.designs[v][(i, a)];
                    }
                }
            }
        }
        let mut prior_cov = DMatrix::zeros(j * k * n, j * k * n);
        for a in 0..k {
            let qinv = dense_spd_inverse(&m.op.precision(&h.tasks[a]).to_dense()).unwrap();
            for r in 0..j {
                for u in 0..n {
                    for v in 0..n {
                        prior_cov[(r * k * n + u * k + a, r * k * n + v * k + a)] = qinv[(u, v)];
                    }
                }
            }
        }
        Dense { x, y, prior_cov }
    }

    #[test]
    fn matches_dense_oracle() {
        let sessions = toy_sessions(12, 9, 2, 2, 7);
        let m = model(4, 3, &sessions);
        let h = hyper();
        let d = dense(&m, &sessions, &h);
        let s2 = h.sigma2();
        let marg_cov = &d.x * &d.prior_cov * d.x.transpose()
            + DMatrix::identity(d.y.len(), d.y.len()) * s2;
        let ll_dense = dense_gaussian_logpdf(&d.y, &marg_cov).unwrap();
        let ll = m.log_marginal_likelihood(&h).unwrap();
        assert!((ll - ll_dense).abs() < 1e-8 * ll_dense.abs().max(1.0), "{ll} vs {ll_dense}");

        let prec = dense_spd_inverse(&d.prior_cov).unwrap() + d.x.transpose() * &d.x / s2;
        let cov = dense_spd_inverse(&prec).unwrap();
        let mean = &cov * d.x.transpose() * &d.y / s2;
        let post = m.posterior(&h).unwrap();
        let (n, k) = (12, 2);
        for (r, b) in post.blocks().iter().enumerate() {
            let off = r * n * k;
            for i in 0..n * k {
                assert!((b.mean()[i] - mean[off + i]).abs() < 1e-8);
            }
            let c = b.dense_covariance();
            for i in 0..n * k {
                for jx in 0..n * k {
                    assert!((c[(i, jx)] - cov[(off + i, off + jx)]).abs() < 1e-8);
                }
            }
            for a in 0..k {
                let var = b.task_variance(a);
                for v in 0..n {
                    assert!((var[v] - cov[(off + v * k + a, off + v * k + a)]).abs() < 1e-10);
                }
            }
        }
        // cross-run average of task 1
        let f = post.field(&FieldSelector::Average { task: 1 }).unwrap();
        let mut w = DMatrix::zeros(n, 2 * n * k);
        for r in 0..2 {
            for v in 0..n {
                w[(v, r * n * k + v * k + 1)] = 0.5;
            }
        }
        let avg_mean = &w * &mean;
        let avg_cov = &w * &cov * w.transpose();
        let fm = f.mean();
        let fc = f.dense_covariance();
        let fv = f.variance();
        for v in 0..n {
            assert!((fm[v] - avg_mean[v]).abs() < 1e-8);
            assert!((fv[v] - avg_cov[(v, v)]).abs() < 1e-10);
            for u in 0..n {
                assert!((fc[(u, v)] - avg_cov[(u, v)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn vanishing_noise_recovers_least_squares() {
        let sessions = toy_sessions(12, 30, 2, 1, 11);
        let m = model(4, 3, &sessions);
        let mut h = hyper();
        h.log_sigma2 = (1e-9f64).ln();
        let post = m.posterior(&h).unwrap();
        let cls = fit_classical(&sessions[0]).unwrap();
        for a in 0..2 {
            let mu = post.mean(0, a);
            for v in 0..12 {
                assert!((mu[v] - cls.beta[(v, a)]).abs() < 1e-5, "{} vs {}", mu[v], cls.beta[(v, a)]);
            }
        }
    }

    #[test]
    fn invalid_vertices_follow_the_prior() {
        let mut sessions = toy_sessions(12, 10, 2, 1, 5);
        sessions[0].valid[3] = false;
        let m = model(4, 3, &sessions);
        let h = hyper();
        let mut prior_only = sessions.clone();
        for v in 0..12 {
            prior_only[0].valid[v] = false;
        }
        let m0 = model(4, 3, &prior_only);
        assert!(m0.log_marginal_likelihood(&h).unwrap().abs() < 1e-9);
        let post0 = m0.posterior(&h).unwrap();
        let qinv = dense_spd_inverse(&m.op.precision(&h.tasks[0]).to_dense()).unwrap();
        let sd = post0.sd(0, 0);
        for v in 0..12 {
            assert!((sd[v] - qinv[(v, v)].sqrt()).abs() < 1e-10);
        }
        assert!(m.log_marginal_likelihood(&h).unwrap().is_finite());
    }

    #[test]
    fn hyperparameter_vector_round_trip() {
        let h = hyper();
        assert_eq!(Hyperparams::from_vec(&h.to_vec()), h);
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(serde_json::from_str::<Hyperparams>(&json).unwrap(), h);
    }
}
