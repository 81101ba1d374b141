use serde::Serialize;

use super::SurfaceMesh;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeRatio {
    pub u: usize,
    pub v: usize,
    /// `‖u − v‖_A / ‖u − v‖_B`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistortionReport {
    pub edges: Vec<EdgeRatio>,
    /// `(probability, quantile)` pairs of the ratio distribution.
    pub quantiles: Vec<(f64, f64)>,
    pub mean: f64,
}

const PROBS: [f64; 7] = [0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0];

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-edge ratio of Euclidean edge lengths between two embeddings of the
/// same triangulation.
pub fn edge_distance_distortion(a: &SurfaceMesh, b: &SurfaceMesh) -> Result<DistortionReport> {
    if a.n_vertices() != b.n_vertices() || a.triangles() != b.triangles() {
        return Err(Error::TopologyMismatch);
    }
    let edges: Vec<EdgeRatio> = a
        .edges()
        .into_iter()
        .map(|(u, v)| EdgeRatio {
            u,
            v,
            ratio: a.edge_length(u, v) / b.edge_length(u, v),
        })
        .collect();
    let mut sorted: Vec<f64> = edges.iter().map(|e| e.ratio).collect();
    sorted.sort_by(f64::total_cmp);
    let quantiles = if sorted.is_empty() {
        Vec::new()
    } else {
        PROBS.iter().map(|&p| (p, quantile_sorted(&sorted, p))).collect()
    };
    let mean = sorted.iter().sum::<f64>() / sorted.len().max(1) as f64;
    Ok(DistortionReport {
        edges,
        quantiles,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_scaled() {
        let m = SurfaceMesh::icosphere(1, 1.0).unwrap();
        let r = edge_distance_distortion(&m, &m).unwrap();
        assert!(r.edges.iter().all(|e| e.ratio == 1.0));
        let r = edge_distance_distortion(&m.scaled(2.0), &m).unwrap();
        assert!(r.edges.iter().all(|e| (e.ratio - 2.0).abs() < 1e-14));
        assert_eq!(r.edges.len(), 120);
        assert!((r.quantiles[3].1 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn topology_mismatch() {
        let a = SurfaceMesh::icosphere(0, 1.0).unwrap();
        let b = SurfaceMesh::icosphere(1, 1.0).unwrap();
        assert!(matches!(edge_distance_distortion(&a, &b), Err(Error::TopologyMismatch)));
    }
}
