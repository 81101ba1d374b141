use std::path::PathBuf;

use serde::Serialize;
use surfglm::mesh::edge_distance_distortion;

use crate::error::CliResult;
use crate::fitdir::{create_dir, read_mesh, write_json};
use crate::manifest::Manifest;

#[derive(Debug, clap::Args, Serialize)]
pub struct Args {
    /// Reference embedding (e.g. the inflated or spherical surface).
    #[arg(long)]
    mesh_a: PathBuf,
    /// Second embedding with the same triangulation.
    #[arg(long)]
    mesh_b: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Summary {
    n_edges: usize,
    mean: f64,
    quantiles: Vec<(f64, f64)>,
}

pub fn run(args: Args) -> CliResult<()> {
    let a = read_mesh(&args.mesh_a)?;
    let b = read_mesh(&args.mesh_b)?;
    let report = edge_distance_distortion(&a, &b)?;
    let out = &args.out;
    create_dir(out)?;
    let mut tsv = String::from("u\tv\tratio\n");
    for e in &report.edges {
        tsv.push_str(&format!("{}\t{}\t{}\n", e.u, e.v, e.ratio));
    }
    std::fs::write(out.join("edges.tsv"), tsv)?;
    write_json(
        &out.join("summary.json"),
        &Summary {
            n_edges: report.edges.len(),
            mean: report.mean,
            quantiles: report.quantiles.clone(),
        },
    )?;
    let mut manifest = Manifest::new("distort", &args)?;
    manifest.input(&args.mesh_a)?;
    manifest.input(&args.mesh_b)?;
    manifest.finish(out)
}
