use std::collections::HashMap;

use super::{norm, Point, SurfaceMesh};
use crate::{Error, Result};

impl SurfaceMesh {
    /// Planar `nx × ny` vertex grid in the `z = 0` plane, each cell split into
    /// two triangles.
    pub fn grid(nx: usize, ny: usize, spacing: f64) -> Result<Self> {
        if nx < 2 || ny < 2 || !(spacing > 0.0) {
            return Err(Error::param("grid needs nx, ny >= 2 and spacing > 0"));
        }
        let vertices: Vec<Point> = (0..ny)
            .flat_map(|j| (0..nx).map(move |i| [i as f64 * spacing, j as f64 * spacing, 0.0]))
            .collect();
        let id = |i: usize, j: usize| j * nx + i;
        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Self::new(vertices, triangles)
    }

    /// Icosahedron subdivided `level` times and projected onto a sphere.
    pub fn icosphere(level: usize, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::param("icosphere radius must be positive"));
        }
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut vertices: Vec<Point> = vec![
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        let mut triangles: Vec<[usize; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        let project = |p: Point| {
            let r = norm(&p);
            [p[0] * radius / r, p[1] * radius / r, p[2] * radius / r]
        };
        vertices.iter_mut().for_each(|p| *p = project(*p));
        for _ in 0..level {
            let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(triangles.len() * 4);
            for &[a, b, c] in &triangles {
                let mut mid = |u: usize, v: usize| {
                    *midpoint.entry((u.min(v), u.max(v))).or_insert_with(|| {
                        let (p, q) = (vertices[u], vertices[v]);
                        vertices.push(project([
                            (p[0] + q[0]) / 2.0,
                            (p[1] + q[1]) / 2.0,
                            (p[2] + q[2]) / 2.0,
                        ]));
                        vertices.len() - 1
                    })
                };
                let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
                next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            triangles = next;
        }
        Self::new(vertices, triangles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts() {
        let g = SurfaceMesh::grid(2, 2, 1.0).unwrap();
        assert_eq!((g.n_vertices(), g.n_triangles()), (4, 2));
        let g = SurfaceMesh::grid(7, 5, 0.5).unwrap();
        assert_eq!(g.n_vertices(), 35);
        assert!((g.total_area() - 3.0 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn icosphere_counts() {
        let ico = SurfaceMesh::icosphere(0, 1.0).unwrap();
        assert_eq!((ico.n_vertices(), ico.n_triangles()), (12, 20));
        let ico2 = SurfaceMesh::icosphere(2, 1.0).unwrap();
        assert_eq!((ico2.n_vertices(), ico2.n_triangles()), (162, 320));
    }
}
