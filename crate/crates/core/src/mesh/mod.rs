//! Triangulated surfaces and the geometry built on them.

mod distortion;
mod fem;
mod generate;
mod smooth;

pub use distortion::{edge_distance_distortion, DistortionReport, EdgeRatio};
pub use fem::{assemble_fem, FemMatrices};
pub use smooth::{fwhm_to_sigma, surface_smooth, Smoother};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

pub type Point = [f64; 3];

/// A 2-manifold triangulation with vertex coordinates in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
}

/// Vertex neighbourhoods from shared triangle edges; symmetric, no self loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

pub(crate) fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

impl SurfaceMesh {
    /// Validates indices, triangle areas and edge manifoldness.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate".into()));
        }
        let mut edge_count: HashMap<(usize, usize), u32> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
            let [a, b, c] = *tri;
            if a == b || b == c || a == c {
                return Err(Error::DegenerateTriangle { index: t });
            }
            let e1 = sub(&vertices[b], &vertices[a]);
            let e2 = sub(&vertices[c], &vertices[a]);
            let e3 = sub(&vertices[c], &vertices[b]);
            let scale = dot(&e1, &e1).max(dot(&e2, &e2)).max(dot(&e3, &e3));
            let area2 = norm(&cross(&e1, &e2));
            if !(area2 > 1e-12 * scale) {
                return Err(Error::DegenerateTriangle { index: t });
            }
            for (u, v) in [(a, b), (b, c), (c, a)] {
                let count = edge_count.entry((u.min(v), u.max(v))).or_insert(0);
                *count += 1;
                if *count > 2 {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({}, {}) is shared by more than two triangles",
                        u.min(v),
                        u.max(v)
                    )));
                }
            }
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let e1 = sub(&self.vertices[b], &self.vertices[a]);
        let e2 = sub(&self.vertices[c], &self.vertices[a]);
        0.5 * norm(&cross(&e1, &e2))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Undirected edges `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn edge_length(&self, u: usize, v: usize) -> f64 {
        norm(&sub(&self.vertices[u], &self.vertices[v]))
    }

    /// Diagonal of the axis-aligned bounding box.
    pub fn bounding_diameter(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.vertices {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        norm(&sub(&hi, &lo))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|p| [p[0] * factor, p[1] * factor, p[2] * factor])
                .collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Same triangulation with vertices reordered: new vertex `i` is old vertex
    /// `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_vertices();
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                what: "vertex permutation",
                expected: n,
                found: perm.len(),
            });
        }
        let mut inv = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        if inv.contains(&usize::MAX) {
            return Err(Error::param("vertex ordering is not a permutation"));
        }
        Self::new(
            perm.iter().map(|&old| self.vertices[old]).collect(),
            self.triangles
                .iter()
                .map(|t| [inv[t[0]], inv[t[1]], inv[t[2]]])
                .collect(),
        )
    }

    pub fn adjacency(&self) -> Adjacency {
        vertex_adjacency(self)
    }

    /// Reads the `mesh <N> <T>` text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hl, header) = lines.next().ok_or_else(|| Error::parse(1, "empty mesh file"))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 3 || toks[0] != "mesh" {
            return Err(Error::parse(hl + 1, "expected header `mesh <N> <T>`"));
        }
        let count = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::parse(hl + 1, format!("bad count {s:?}: {e}")))
        };
        let (n, t) = (count(toks[1])?, count(toks[2])?);

        let mut vertices = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("expected {n} vertex lines")))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(ln + 1, e.to_string()))?;
            if vals.len() != 3 {
                return Err(Error::parse(ln + 1, "vertex line must have 3 coordinates"));
            }
            vertices.push([vals[0], vals[1], vals[2]]);
        }
        let mut triangles = Vec::with_capacity(t);
        for _ in 0..t {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("expected {t} triangle lines")))?;
            let idx: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(ln + 1, e.to_string()))?;
            if idx.len() != 3 {
                return Err(Error::parse(ln + 1, "triangle line must have 3 indices"));
            }
            triangles.push([idx[0], idx[1], idx[2]]);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(Error::parse(ln + 1, "trailing content after triangles"));
        }
        Self::new(vertices, triangles)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("mesh {} {}\n", self.n_vertices(), self.n_triangles());
        for p in &self.vertices {
            writeln!(out, "{} {} {}", p[0], p[1], p[2]).unwrap();
        }
        for t in &self.triangles {
            writeln!(out, "{} {} {}", t[0], t[1], t[2]).unwrap();
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Builds the vertex adjacency from triangle edges.
pub fn vertex_adjacency(mesh: &SurfaceMesh) -> Adjacency {
    let mut neighbors = vec![Vec::new(); mesh.n_vertices()];
    for (u, v) in mesh.edges() {
        neighbors[u].push(v);
        neighbors[v].push(u);
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
    }
    Adjacency { neighbors }
}

impl Adjacency {
    pub fn n_vertices(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn lists(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    /// Connected component label per vertex, labels in order of first vertex.
    pub fn components(&self) -> Vec<usize> {
        let n = self.neighbors.len();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            stack.push(s);
            while let Some(v) = stack.pop() {
                for &u in &self.neighbors[v] {
                    if label[u] == usize::MAX {
                        label[u] = next;
                        stack.push(u);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn n_components(&self) -> usize {
        self.components().into_iter().max().map_or(0, |m| m + 1)
    }

    /// Sparse boolean matrix as sorted `(row, col)` pairs.
    pub fn to_pairs(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(u, nb)| nb.iter().map(move |&v| (u, v)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_triangle() -> SurfaceMesh {
        SurfaceMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn single_triangle_is_fully_adjacent() {
        let adj = unit_triangle().adjacency();
        assert_eq!(adj.to_pairs(), vec![(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]);
    }

    #[test]
    fn adjacency_only_from_shared_edges() {
        // two triangles sharing edge (1,2); vertices 0 and 3 are not adjacent
        let m = SurfaceMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [5.0, 5.0, 0.0]],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap();
        let adj = m.adjacency();
        assert!(!adj.contains(0, 3));
        assert!(adj.contains(1, 2) && adj.contains(2, 1));
        assert_eq!(adj.degree(4), 0);
        assert_eq!(adj.n_edges(), 5);
        assert_eq!(adj.n_components(), 2);
    }

    #[test]
    fn icosahedron_degree_five() {
        let ico = SurfaceMesh::icosphere(0, 1.0).unwrap();
        let adj = ico.adjacency();
        assert!((0..12).all(|v| adj.degree(v) == 5));
        assert_eq!(adj.n_edges(), 30);
    }

    #[test]
    fn rejects_bad_meshes() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert!(matches!(
            SurfaceMesh::new(v.clone(), vec![[0, 1, 2]]),
            Err(Error::DegenerateTriangle { index: 0 })
        ));
        assert!(matches!(
            SurfaceMesh::new(v.clone(), vec![[0, 1, 3]]),
            Err(Error::InvalidMesh(_))
        ));
        let fan = SurfaceMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]],
            vec![[0, 1, 2], [0, 1, 3], [0, 1, 4]],
        );
        assert!(matches!(fan, Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn text_roundtrip_and_strictness() {
        let m = SurfaceMesh::icosphere(1, 2.0).unwrap();
        assert_eq!(SurfaceMesh::parse(&m.to_text()).unwrap(), m);
        assert!(SurfaceMesh::parse("mesh 3 1\n0 0 0\n1 0 0\n0 1 0\n").is_err());
        assert!(SurfaceMesh::parse("mesh 3 1\n0 0 0\n1 0 0\n0 1 0\n0 1 2\n9 9 9\n").is_err());
        assert!(SurfaceMesh::parse("mesh 3 1\n0 0 0\n1 0 0\n0 1\n0 1 2\n").is_err());
        assert!(SurfaceMesh::parse("msh 3 1\n").is_err());
    }
}
