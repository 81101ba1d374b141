use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use surfglm::activation::ActivationMap;
use surfglm::reliability::{dice, icc_map, icc_quality_bins, metrics_tsv, proxy_accuracy, MetricRow, QualityBins};

use crate::error::{CliError, CliResult};
use crate::fitdir::{create_dir, read_mat, write_json, FitDir};
use crate::manifest::Manifest;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// First-visit subject fits, one per subject.
    #[arg(long = "visit1", requires = "visit2")]
    visit1: Vec<PathBuf>,
    /// Second-visit subject fits, in the same subject order.
    #[arg(long = "visit2")]
    visit2: Vec<PathBuf>,
    /// First-visit activation directories (`surfglm activate` outputs).
    #[arg(long = "maps1", requires = "maps2")]
    maps1: Vec<PathBuf>,
    #[arg(long = "maps2")]
    maps2: Vec<PathBuf>,
    /// Fit whose estimates are compared with `--proxy`.
    #[arg(long, requires = "proxy")]
    estimate: Option<PathBuf>,
    /// Proxy ground truth (N × K matrix).
    #[arg(long)]
    proxy: Option<PathBuf>,
    /// Vertex mask (one 0/1 value per vertex) for summaries.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Default, Serialize)]
struct Summary {
    icc: Vec<IccSummary>,
    dice: Vec<DiceSummary>,
    proxy: Vec<ProxySummary>,
}

#[derive(Debug, Serialize)]
struct IccSummary {
    task: String,
    bins: QualityBins,
    flagged: usize,
}

#[derive(Debug, Serialize)]
struct DiceSummary {
    subject: usize,
    field: String,
    gamma: String,
    dice: f64,
    flagged: bool,
}

#[derive(Debug, Serialize)]
struct ProxySummary {
    task: String,
    mse: f64,
    pearson: f64,
    n: usize,
}

fn read_mask(path: &Path, n: usize) -> CliResult<Vec<bool>> {
    let m = read_mat(path)?;
    if m.len() != n {
        return Err(CliError::config(format!("mask has {} entries for {n} vertices", m.len())));
    }
    Ok(m.iter().map(|v| *v != 0.0).collect())
}

/// `field/gamma-g` subdirectories of an activation output, sorted.
fn activation_entries(dir: &Path) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for f in crate::manifest::walk(dir)? {
        if f.file_name().is_some_and(|n| n == "active.tsv") {
            let g = f.parent().unwrap();
            let field = g.parent().unwrap();
            if field.parent() == Some(dir) {
                out.push((
                    field.file_name().unwrap().to_string_lossy().into_owned(),
                    g.file_name().unwrap().to_string_lossy().into_owned(),
                ));
            }
        }
    }
    Ok(out)
}

pub fn run(args: Args) -> CliResult<()> {
    if args.visit1.is_empty() && args.maps1.is_empty() && args.estimate.is_none() {
        return Err(CliError::config("nothing to compare: give --visit1/--visit2, --maps1/--maps2 or --estimate/--proxy"));
    }
    let mut rows = Vec::new();
    let mut summary = Summary::default();
    let mut mask: Option<Vec<bool>> = None;

    if !args.visit1.is_empty() {
        if args.visit1.len() != args.visit2.len() {
            return Err(CliError::config("--visit1 and --visit2 need the same number of subjects"));
        }
        let v1 = args.visit1.iter().map(|p| FitDir::open(p)).collect::<CliResult<Vec<_>>>()?;
        let v2 = args.visit2.iter().map(|p| FitDir::open(p)).collect::<CliResult<Vec<_>>>()?;
        let fields = v1[0].info.fields.clone();
        if v1.iter().chain(&v2).any(|f| f.info.fields != fields) {
            return Err(CliError::config("visit fits do not share the same fields"));
        }
        let b1 = v1.iter().map(FitDir::beta).collect::<CliResult<Vec<_>>>()?;
        let b2 = v2.iter().map(FitDir::beta).collect::<CliResult<Vec<_>>>()?;
        let n = b1[0].nrows();
        if b1.iter().chain(&b2).any(|b| b.nrows() != n) {
            return Err(CliError::config("visit fits differ in vertex count"));
        }
        if let Some(p) = &args.mask {
            mask = Some(read_mask(p, n)?);
        }
        for (k, task) in fields.iter().enumerate() {
            let stack = |bs: &[DMatrix<f64>]| DMatrix::from_fn(bs.len(), n, |m, v| bs[m][(v, k)]);
            let iccs = icc_map(&stack(&b1), &stack(&b2))?;
            let values: Vec<f64> = iccs.iter().map(|i| i.value).collect();
            for (v, i) in iccs.iter().enumerate() {
                rows.push(MetricRow {
                    vertex: Some(v),
                    task: task.clone(),
                    metric: "icc".into(),
                    value: i.value,
                });
            }
            summary.icc.push(IccSummary {
                task: task.clone(),
                bins: icc_quality_bins(&values, mask.as_deref())?,
                flagged: iccs.iter().filter(|i| i.flagged).count(),
            });
        }
    }

    if !args.maps1.is_empty() {
        if args.maps1.len() != args.maps2.len() {
            return Err(CliError::config("--maps1 and --maps2 need the same number of subjects"));
        }
        for (s, (d1, d2)) in args.maps1.iter().zip(&args.maps2).enumerate() {
            for (field, gamma) in activation_entries(d1)? {
                let other = d2.join(&field).join(&gamma);
                if !other.is_dir() {
                    continue;
                }
                let a = ActivationMap::read(&d1.join(&field).join(&gamma))?;
                let b = ActivationMap::read(&other)?;
                let d = dice(&a.active, &b.active)?;
                rows.push(MetricRow {
                    vertex: None,
                    task: format!("{field}/{gamma}"),
                    metric: format!("dice[{}]", s + 1),
                    value: d.value,
                });
                summary.dice.push(DiceSummary {
                    subject: s + 1,
                    field,
                    gamma,
                    dice: d.value,
                    flagged: d.flagged,
                });
            }
        }
    }

    if let (Some(e), Some(p)) = (&args.estimate, &args.proxy) {
        let fit = FitDir::open(e)?;
        let est = fit.beta()?;
        let proxy = read_mat(p)?;
        if proxy.shape() != est.shape() {
            return Err(CliError::config(format!(
                "proxy is {}x{}, estimates are {}x{}",
                proxy.nrows(),
                proxy.ncols(),
                est.nrows(),
                est.ncols()
            )));
        }
        if mask.is_none() {
            if let Some(m) = &args.mask {
                mask = Some(read_mask(m, est.nrows())?);
            }
        }
        for (k, task) in fit.info.fields.iter().enumerate() {
            let a: Vec<f64> = est.column(k).iter().copied().collect();
            let b: Vec<f64> = proxy.column(k).iter().copied().collect();
            let acc = proxy_accuracy(&a, &b, mask.as_deref())?;
            for (metric, value) in [("mse", acc.mse), ("pearson", acc.pearson)] {
                rows.push(MetricRow {
                    vertex: None,
                    task: task.clone(),
                    metric: metric.into(),
                    value,
                });
            }
            summary.proxy.push(ProxySummary {
                task: task.clone(),
                mse: acc.mse,
                pearson: acc.pearson,
                n: acc.n,
            });
        }
    }

    let out = &args.out;
    create_dir(out)?;
    std::fs::write(out.join("metrics.tsv"), metrics_tsv(&rows))?;
    write_json(&out.join("summary.json"), &summary)?;
    let mut manifest = Manifest::new("reliability", &args)?;
    for p in args
        .visit1
        .iter()
        .chain(&args.visit2)
        .chain(&args.maps1)
        .chain(&args.maps2)
        .chain(&args.estimate)
        .chain(&args.proxy)
        .chain(&args.mask)
    {
        manifest.input(p)?;
    }
    manifest.finish(out)
}
