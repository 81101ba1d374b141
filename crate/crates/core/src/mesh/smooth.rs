use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::SurfaceMesh;
use crate::{Error, Result};

/// `σ = fwhm / (2 √(2 ln 2))`.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Row-normalised Gaussian kernel over graph-geodesic distances, truncated at
/// 3σ. Build once and apply to many fields.
#[derive(Debug, Clone)]
pub struct Smoother {
    weights: Option<Vec<Vec<(usize, f64)>>>,
    n: usize,
}

#[derive(Clone, Copy, PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over edge lengths from `source`, stopping beyond `cutoff`.
fn geodesic_ball(nbrs: &[Vec<(usize, f64)>], source: usize, cutoff: f64) -> Vec<(usize, f64)> {
    let mut dist: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
    let mut heap = BinaryHeap::from([Item(0.0, source)]);
    dist.insert(source, 0.0);
    let mut out = Vec::new();
    while let Some(Item(d, v)) = heap.pop() {
        if d > dist[&v] {
            continue;
        }
        out.push((v, d));
        for &(u, len) in &nbrs[v] {
            let nd = d + len;
            if nd <= cutoff && dist.get(&u).is_none_or(|&old| nd < old) {
                dist.insert(u, nd);
                heap.push(Item(nd, u));
            }
        }
    }
    out.sort_by_key(|&(v, _)| v);
    out
}

impl Smoother {
    pub fn new(mesh: &SurfaceMesh, fwhm: f64) -> Result<Self> {
        if !(fwhm >= 0.0) || !fwhm.is_finite() {
            return Err(Error::param(format!("smoothing FWHM must be >= 0, got {fwhm}")));
        }
        let n = mesh.n_vertices();
        if fwhm == 0.0 {
            return Ok(Self { weights: None, n });
        }
        let adj = mesh.adjacency();
        if adj.n_components() > 1 {
            log::warn!(
                "mesh has {} connected components; smoothing stays within each",
                adj.n_components()
            );
        }
        let nbrs: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|v| {
                adj.neighbors(v)
                    .iter()
                    .map(|&u| (u, mesh.edge_length(u, v)))
                    .collect()
            })
            .collect();
        let sigma = fwhm_to_sigma(fwhm);
        let cutoff = 3.0 * sigma;
        let weights = (0..n)
            .into_par_iter()
            .map(|v| {
                let ball = geodesic_ball(&nbrs, v, cutoff);
                let raw: Vec<(usize, f64)> = ball
                    .into_iter()
                    .map(|(u, d)| (u, (-d * d / (2.0 * sigma * sigma)).exp()))
                    .collect();
                let total: f64 = raw.iter().map(|w| w.1).sum();
                raw.into_iter().map(|(u, w)| (u, w / total)).collect()
            })
            .collect();
        Ok(Self {
            weights: Some(weights),
            n,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.weights.is_none()
    }

    pub fn apply(&self, field: &[f64]) -> Result<Vec<f64>> {
        if field.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "smoothed field",
                expected: self.n,
                found: field.len(),
            });
        }
        Ok(match &self.weights {
            None => field.to_vec(),
            Some(w) => w
                .iter()
                .map(|row| row.iter().map(|&(u, wt)| wt * field[u]).sum())
                .collect(),
        })
    }

    /// Smooths each row of a `T × N` matrix (one spatial map per time point).
    pub fn apply_rows(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.ncols() != self.n {
            return Err(Error::DimensionMismatch {
                what: "smoothed matrix columns",
                expected: self.n,
                found: m.ncols(),
            });
        }
        let Some(w) = &self.weights else {
            return Ok(m.clone());
        };
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .into_par_iter()
            .map(|t| {
                w.iter()
                    .map(|row| row.iter().map(|&(u, wt)| wt * m[(t, u)]).sum())
                    .collect()
            })
            .collect();
        Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |t, v| rows[t][v]))
    }
}

/// Gaussian surface smoothing of one field; `fwhm = 0` is the identity.
pub fn surface_smooth(mesh: &SurfaceMesh, field: &[f64], fwhm: f64) -> Result<Vec<f64>> {
    Smoother::new(mesh, fwhm)?.apply(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_fwhm_is_identity() {
        let m = SurfaceMesh::grid(4, 4, 1.0).unwrap();
        let f: Vec<f64> = (0..16).map(|i| (i * i) as f64).collect();
        assert_eq!(surface_smooth(&m, &f, 0.0).unwrap(), f);
    }

    #[test]
    fn constant_field_preserved() {
        let m = SurfaceMesh::icosphere(2, 20.0).unwrap();
        let f = vec![3.25; m.n_vertices()];
        let s = surface_smooth(&m, &f, 8.0).unwrap();
        assert!(s.iter().all(|v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn delta_spreads_to_uniform_with_huge_kernel() {
        let m = SurfaceMesh::grid(6, 5, 1.0).unwrap();
        let n = m.n_vertices();
        let mut f = vec![0.0; n];
        f[7] = 1.0;
        let s = surface_smooth(&m, &f, 1e4).unwrap();
        for v in s {
            assert!((v - 1.0 / n as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn disconnected_mesh_smooths_within_components() {
        let m = SurfaceMesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [10.0, 0.0, 0.0],
                [11.0, 0.0, 0.0],
                [10.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let s = surface_smooth(&m, &[1.0, 1.0, 1.0, 5.0, 5.0, 5.0], 1e3).unwrap();
        assert!(s[..3].iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(s[3..].iter().all(|v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn negative_fwhm_rejected() {
        let m = SurfaceMesh::grid(2, 2, 1.0).unwrap();
        assert!(Smoother::new(&m, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn smoothing_is_linear(a in proptest::collection::vec(-10.0f64..10.0, 25),
                               b in proptest::collection::vec(-10.0f64..10.0, 25),
                               s in -3.0f64..3.0) {
            let m = SurfaceMesh::grid(5, 5, 1.0).unwrap();
            let sm = Smoother::new(&m, 2.5).unwrap();
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
            let lhs = sm.apply(&combo).unwrap();
            let (sa, sb) = (sm.apply(&a).unwrap(), sm.apply(&b).unwrap());
            for i in 0..25 {
                prop_assert!((lhs[i] - (sa[i] + s * sb[i])).abs() < 1e-10);
            }
        }
    }
}
