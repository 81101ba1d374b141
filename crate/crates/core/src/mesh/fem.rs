use super::{cross, dot, norm, sub, SurfaceMesh};
use crate::linalg::SparseMatrix;
use crate::{Error, Result};

/// Linear-element matrices: lumped mass `C` (diagonal, mm²) and cotangent
/// stiffness `G`.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    mass: Vec<f64>,
    stiffness: SparseMatrix,
}

impl FemMatrices {
    /// Diagonal of `C`.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn mass_matrix(&self) -> SparseMatrix {
        SparseMatrix::from_diagonal(&self.mass)
    }

    pub fn stiffness(&self) -> &SparseMatrix {
        &self.stiffness
    }

    pub fn n(&self) -> usize {
        self.mass.len()
    }
}

/// Assembles the lumped mass and cotangent stiffness matrices.
///
/// For a triangle `(i, j, k)` the stiffness contribution is
/// `G_ij -= cot(θ_k) / 2`, with the diagonal set so every row sums to zero.
pub fn assemble_fem(mesh: &SurfaceMesh) -> Result<FemMatrices> {
    let n = mesh.n_vertices();
    let v = mesh.vertices();
    let mut mass = vec![0.0; n];
    let mut trips = Vec::with_capacity(mesh.n_triangles() * 9);
    for (t, &tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(t);
        if !(area > 0.0) {
            return Err(Error::DegenerateTriangle { index: t });
        }
        for &i in &tri {
            mass[i] += area / 3.0;
        }
        for corner in 0..3 {
            let k = tri[corner];
            let i = tri[(corner + 1) % 3];
            let j = tri[(corner + 2) % 3];
            let a = sub(&v[i], &v[k]);
            let b = sub(&v[j], &v[k]);
            let cot = dot(&a, &b) / norm(&cross(&a, &b));
            let w = 0.5 * cot;
            trips.push((i, j, -w));
            trips.push((j, i, -w));
            trips.push((i, i, w));
            trips.push((j, j, w));
        }
    }
    if let Some(i) = mass.iter().position(|&m| m <= 0.0) {
        return Err(Error::InvalidMesh(format!(
            "vertex {i} belongs to no triangle (zero mass)"
        )));
    }
    Ok(FemMatrices {
        mass,
        stiffness: SparseMatrix::from_triplets(n, n, &trips),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    #[test]
    fn equilateral_mass() {
        let h = 3f64.sqrt() / 2.0;
        let m = SurfaceMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, h, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let fem = assemble_fem(&m).unwrap();
        for &c in fem.mass() {
            assert!((c - (3f64.sqrt() / 4.0) / 3.0).abs() < 1e-15);
        }
        assert!((fem.mass()[0] - 0.1443).abs() < 1e-4);
    }

    #[test]
    fn right_triangle_cotangent_weights() {
        let m = SurfaceMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let g = assemble_fem(&m).unwrap().stiffness().to_dense();
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[(i, j)] - expect[i][j]).abs() < 1e-14, "G[{i},{j}] = {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn null_space_symmetry_area_and_psd() {
        for mesh in [
            SurfaceMesh::icosphere(2, 10.0).unwrap(),
            SurfaceMesh::grid(9, 7, 1.5).unwrap(),
        ] {
            let fem = assemble_fem(&mesh).unwrap();
            let g = fem.stiffness();
            let ones = vec![1.0; mesh.n_vertices()];
            assert!(g.mul_vec(&ones).iter().all(|r| r.abs() < 1e-12));
            assert_eq!(g.asymmetry(), 0.0);
            let total: f64 = fem.mass().iter().sum();
            assert!((total - mesh.total_area()).abs() <= 1e-10 * total);

            let adj = mesh.adjacency();
            for (i, j, _) in g.triplets() {
                assert!(i == j || adj.contains(i, j));
            }

            let eig = SymmetricEigen::new(g.to_dense());
            let scale = g.max_abs();
            assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10 * scale));
        }
    }
}
