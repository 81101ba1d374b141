use surfglm::activation::{excursion_sets, ExcursionConfig};
use surfglm::inference::{fit_classical_multi, initial_hyperparams, optimize_hyperparams, BayesModel, FieldSelector, OptimizerConfig, RunStats};
use surfglm::mesh::assemble_fem;
use surfglm::signal::{preprocess, PreprocessOptions};
use surfglm::simulate::{FieldSpec, MeshSpec, NoiseSpec, SimSpec, Simulator};
use surfglm::spde::{sample_gmrf, SpdeHyper, SpdeOperator};

fn spec() -> SimSpec {
    SimSpec {
        mesh: MeshSpec::Icosphere { level: 2, radius: 30.0 },
        tasks: vec![
            FieldSpec { mean: 0.8, ..FieldSpec::from_range_sd(25.0, 0.6) },
            FieldSpec::from_range_sd(15.0, 0.5),
        ],
        runs: 2,
        subjects: 1,
        visits: 1,
        n_volumes: 160,
        tr: 0.72,
        events: None,
        block_length: 12.0,
        noise: NoiseSpec {
            ar: vec![0.4, -0.1],
            innovation_var: 1.5,
            heterogeneity: 0.2,
        },
        baseline: 8000.0,
        drift: 0.5,
        motion: 3,
        population: None,
        seed: 21,
    }
}

/// Everything a fit produces that should not depend on scheduling.
fn run_pipeline() -> (Vec<f64>, Vec<f64>, Vec<Vec<bool>>) {
    let sim = Simulator::new(&spec()).unwrap();
    let runs = sim.subject_runs(0).unwrap();
    let sessions: Vec<_> = runs.iter().map(|r| r.session.clone()).collect();
    let pre = preprocess(&sessions, sim.mesh(), &PreprocessOptions::default()).unwrap();
    let classical = fit_classical_multi(&pre.whitened).unwrap();
    let op = std::sync::Arc::new(SpdeOperator::new(assemble_fem(sim.mesh()).unwrap()));
    let model = BayesModel::new(op, pre.whitened.iter().map(RunStats::from_session).collect()).unwrap();
    let init = initial_hyperparams(sim.mesh().bounding_diameter(), &classical.runs).unwrap();
    let res = optimize_hyperparams(&model, &init, &OptimizerConfig::default()).unwrap();
    let post = model.posterior(&res.hyper).unwrap();
    let field = post.field(&FieldSelector::Average { task: 0 }).unwrap();
    let maps = excursion_sets(&field, &[0.0, 0.5, 1.0], 0.01, &ExcursionConfig { n_mc: 10_000, seed: 2 }).unwrap();
    let mut numbers = res.hyper.to_vec();
    numbers.push(res.log_marginal);
    (numbers, field.mean(), maps.into_iter().map(|m| m.active).collect())
}

#[test]
fn end_to_end_recovers_signal_and_nests() {
    let (_, mean, maps) = run_pipeline();
    let sim = Simulator::new(&spec()).unwrap();
    let runs = sim.subject_runs(0).unwrap();
    let truth: Vec<f64> = (0..mean.len()).map(|v| 0.5 * (runs[0].beta[(v, 0)] + runs[1].beta[(v, 0)])).collect();
    let mt = truth.iter().sum::<f64>() / truth.len() as f64;
    let me = mean.iter().sum::<f64>() / mean.len() as f64;
    let cov: f64 = truth.iter().zip(&mean).map(|(a, b)| (a - mt) * (b - me)).sum();
    let r = cov / (truth.iter().map(|a| (a - mt).powi(2)).sum::<f64>() * mean.iter().map(|b| (b - me).powi(2)).sum::<f64>()).sqrt();
    assert!(r > 0.5, "correlation with the true average field {r}");
    assert!(maps[0].iter().filter(|a| **a).count() > 0);
    for w in maps.windows(2) {
        assert!(w[1].iter().zip(&w[0]).all(|(b, a)| !b || *a));
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let a = pool(1).install(run_pipeline);
    let b = pool(3).install(run_pipeline);
    assert_eq!(a.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.1.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.1.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.2, b.2);

    let mesh = surfglm::mesh::SurfaceMesh::grid(6, 6, 1.0).unwrap();
    let q = SpdeOperator::new(assemble_fem(&mesh).unwrap()).precision(&SpdeHyper::new(0.7, 1.0).unwrap());
    let s1 = pool(1).install(|| sample_gmrf(&q, 3000, 4).unwrap());
    let s4 = pool(4).install(|| sample_gmrf(&q, 3000, 4).unwrap());
    assert_eq!(s1, s4);
}
