use std::path::PathBuf;

use serde::Serialize;
use surfglm::activation::{
    classical_ttest, correct_bonferroni, correct_fdr, correct_permutation, excursion_sets, ActivationMap,
    ExcursionConfig, Method,
};

use crate::error::{CliError, CliResult};
use crate::fitdir::{create_dir, FitDir};
use crate::manifest::Manifest;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Output directory of `surfglm fit` or `surfglm group`.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// excursion (Bayesian fits), bonferroni, fdr or permutation (classical fits).
    #[arg(long, default_value = "excursion")]
    method: String,
    /// Activation thresholds in percent signal change (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5, 1.0])]
    gamma: Vec<f64>,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Fields to threshold, by name or 1-based column [default: all].
    #[arg(long, value_delimiter = ',')]
    task: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo draws for excursion sets.
    #[arg(long, default_value_t = 50_000)]
    n_mc: usize,
    /// Permutations for the max-t null.
    #[arg(long, default_value_t = 1000)]
    n_perm: usize,
}

pub fn run(args: Args) -> CliResult<()> {
    let method: Method = args.method.parse()?;
    let fit = FitDir::open(&args.fit)?;
    if args.gamma.is_empty() || args.gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(CliError::config("--gamma values must be finite and non-negative"));
    }
    let mut gammas = args.gamma.clone();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    let fields: Vec<usize> = if args.task.is_empty() {
        (0..fit.info.fields.len()).collect()
    } else {
        args.task.iter().map(|t| fit.field_index(t)).collect::<CliResult<_>>()?
    };
    let bayes = matches!(fit.info.model, crate::fitdir::FitModel::Bayes | crate::fitdir::FitModel::BayesGroup);
    if bayes != (method == Method::Excursion) {
        return Err(CliError::config(format!(
            "method {method} does not apply to a {} fit",
            if bayes { "Bayesian" } else { "classical" }
        )));
    }

    let mut maps: Vec<(usize, Vec<ActivationMap>)> = Vec::new();
    match method {
        Method::Excursion => {
            let posts = fit.field_posteriors()?;
            let cfg = ExcursionConfig {
                n_mc: args.n_mc,
                seed: args.seed,
            };
            for &f in &fields {
                maps.push((f, excursion_sets(&posts[f], &gammas, args.alpha, &cfg)?));
            }
        }
        Method::Bonferroni | Method::Fdr => {
            let classical = fit.classical()?;
            for &f in &fields {
                let ms = gammas
                    .iter()
                    .map(|&g| {
                        let t = classical_ttest(&classical, f, g)?;
                        if method == Method::Fdr { correct_fdr(&t, args.alpha) } else { correct_bonferroni(&t, args.alpha) }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                maps.push((f, ms));
            }
        }
        Method::Permutation => {
            let session = fit.whitened_stacked()?;
            for &f in &fields {
                let ms = gammas
                    .iter()
                    .map(|&g| correct_permutation(&session, f, g, args.alpha, args.n_perm, args.seed))
                    .collect::<Result<Vec<_>, _>>()?;
                maps.push((f, ms));
            }
        }
    }

    let out = &args.out;
    create_dir(out)?;
    let mut summary = String::from("field\tgamma\tmethod\talpha\tactive\n");
    for (f, ms) in &maps {
        let name = &fit.info.fields[*f];
        for m in ms {
            m.write(&out.join(name).join(format!("gamma-{}", m.gamma)))?;
            summary.push_str(&format!("{name}\t{}\t{method}\t{}\t{}\n", m.gamma, m.alpha, m.count()));
        }
    }
    std::fs::write(out.join("summary.tsv"), summary)?;
    let mut manifest = Manifest::new("activate", &args)?;
    manifest.input(&args.fit)?;
    manifest.finish(out)
}
