use super::{reverse_cuthill_mckee, SparseMatrix};
use crate::{Error, Result};

/// Cholesky factor `P A Pᵀ = L Lᵀ` stored over a monotone envelope (skyline).
///
/// Row `i` of `L` holds columns `first[i]..=i`, and `first` is non-decreasing,
/// so the column structure below any diagonal entry is a contiguous run of
/// rows. That makes the selected inverse over the envelope a short recursion.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// `inv[old] = new`.
    inv: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    l: Vec<f64>,
    min_pivot: f64,
}

/// Entries of `A⁻¹` on the envelope of the factor.
#[derive(Debug, Clone)]
pub struct SelectedInverse {
    inv: Vec<usize>,
    first: Vec<usize>,
    start: Vec<usize>,
    s: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Factors a symmetric positive definite matrix using a reverse
    /// Cuthill-McKee ordering of its pattern.
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let perm = reverse_cuthill_mckee(&a.pattern_graph());
        Self::factor_with(a, perm, 1)
    }

    /// Factors with an explicit ordering (`perm[new] = old`). The envelope is
    /// widened so that each aligned run of `block` consecutive rows (in the new
    /// ordering) is dense, which keeps within-block inverse entries available.
    pub fn factor_with(a: &SparseMatrix, perm: Vec<usize>, block: usize) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "cholesky (square)",
                expected: n,
                found: a.ncols(),
            });
        }
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                what: "cholesky ordering",
                expected: n,
                found: perm.len(),
            });
        }
        let block = block.max(1);
        let mut inv = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        assert!(inv.iter().all(|&v| v != usize::MAX), "ordering is not a permutation");

        let mut first: Vec<usize> = (0..n).map(|i| (i / block) * block).collect();
        for (i, j, _) in a.triplets() {
            let (ni, nj) = (inv[i], inv[j]);
            let (r, c) = if ni >= nj { (ni, nj) } else { (nj, ni) };
            first[r] = first[r].min(c);
        }
        for i in (0..n.saturating_sub(1)).rev() {
            first[i] = first[i].min(first[i + 1]);
        }
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + (i - first[i] + 1));
        }

        let mut l = vec![0.0; start[n]];
        for (i, j, v) in a.triplets() {
            let (ni, nj) = (inv[i], inv[j]);
            if ni >= nj {
                l[start[ni] + nj - first[ni]] = v;
            }
        }

        let mut min_pivot = f64::INFINITY;
        for i in 0..n {
            let fi = first[i];
            let (done, rest) = l.split_at_mut(start[i]);
            let row = &mut rest[..i - fi + 1];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let rj = &done[start[j]..start[j + 1]];
                let dot: f64 = row[k0 - fi..j - fi]
                    .iter()
                    .zip(&rj[k0 - fj..j - fj])
                    .map(|(a, b)| a * b)
                    .sum();
                row[j - fi] = (row[j - fi] - dot) / rj[j - fj];
            }
            let sq: f64 = row[..i - fi].iter().map(|v| v * v).sum();
            let d = row[i - fi] - sq;
            min_pivot = min_pivot.min(d);
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    index: perm[i],
                    pivot: d,
                    min_pivot,
                });
            }
            row[i - fi] = d.sqrt();
        }

        Ok(Self {
            n,
            perm,
            inv,
            first,
            start,
            l,
            min_pivot,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Smallest pivot encountered (before the square root).
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    /// Number of stored entries in the factor.
    pub fn envelope_size(&self) -> usize {
        self.l.len()
    }

    #[inline]
    fn diag(&self, i: usize) -> f64 {
        self.l[self.start[i + 1] - 1]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    fn forward(&self, y: &mut [f64]) {
        for i in 0..self.n {
            let fi = self.first[i];
            let row = &self.l[self.start[i]..self.start[i + 1]];
            let dot: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - dot) / row[i - fi];
        }
    }

    fn backward(&self, y: &mut [f64]) {
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let row = &self.l[self.start[i]..self.start[i + 1]];
            let xi = y[i] / row[i - fi];
            y[i] = xi;
            for (yk, lk) in y[fi..i].iter_mut().zip(&row[..i - fi]) {
                *yk -= lk * xi;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Maps standard normal `z` (in factor ordering) to a draw with
    /// covariance `A⁻¹`, returned in the original ordering.
    pub fn whiten_inverse(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n);
        let mut y = z.to_vec();
        self.backward(&mut y);
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Entries of `A⁻¹` over the factor envelope (Takahashi recursion).
    pub fn selected_inverse(&self) -> SelectedInverse {
        let n = self.n;
        let mut s = vec![0.0; self.l.len()];
        // last[i]: largest row whose envelope reaches column i
        let mut last = vec![0usize; n];
        let mut k = n;
        for i in (0..n).rev() {
            while k > 0 && self.first[k - 1] > i {
                k -= 1;
            }
            last[i] = k.saturating_sub(1).max(i);
        }
        let idx = |r: usize, c: usize| -> usize {
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            self.start[r] + c - self.first[r]
        };
        let mut lcol = Vec::new();
        for i in (0..n).rev() {
            let lii = self.diag(i);
            lcol.clear();
            lcol.extend((i + 1..=last[i]).map(|r| self.l[idx(r, i)]));
            for j in (i + 1..=last[i]).rev() {
                let mut acc = 0.0;
                for (off, &lki) in lcol.iter().enumerate() {
                    let kk = i + 1 + off;
                    acc += lki * s[idx(kk, j)];
                }
                s[idx(j, i)] = -acc / lii;
            }
            let mut acc = 0.0;
            for (off, &lki) in lcol.iter().enumerate() {
                acc += lki * s[idx(i + 1 + off, i)];
            }
            s[idx(i, i)] = 1.0 / (lii * lii) - acc / lii;
        }
        SelectedInverse {
            inv: self.inv.clone(),
            first: self.first.clone(),
            start: self.start.clone(),
            s,
        }
    }
}

impl SelectedInverse {
    /// `(A⁻¹)_{ij}` in original indices, if the entry lies on the envelope.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (a, b) = (self.inv[i], self.inv[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        (c >= self.first[r]).then(|| self.s[self.start[r] + c - self.first[r]])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.inv.len()).map(|i| self.get(i, i).unwrap()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, density: f64, seed: u64) -> SparseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trips = Vec::new();
        let mut rowsum = vec![0.0; n];
        for i in 0..n {
            for j in 0..i {
                if rng.random::<f64>() < density {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    trips.push((i, j, v));
                    trips.push((j, i, v));
                    rowsum[i] += v.abs();
                    rowsum[j] += v.abs();
                }
            }
        }
        for (i, r) in rowsum.iter().enumerate() {
            trips.push((i, i, r + 0.5));
        }
        SparseMatrix::from_triplets(n, n, &trips)
    }

    #[test]
    fn solve_and_logdet_match_dense() {
        let a = random_spd(40, 0.1, 7);
        let f = EnvelopeCholesky::factor(&a).unwrap();
        let d = a.to_dense();
        let b: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let x = f.solve(&b);
        let r = &d * nalgebra::DVector::from_column_slice(&x) - nalgebra::DVector::from_column_slice(&b);
        assert!(r.amax() < 1e-10);
        let dense_logdet = d.cholesky().unwrap().l().diagonal().map(|v| v.ln()).sum() * 2.0;
        assert!((f.log_det() - dense_logdet).abs() < 1e-10 * dense_logdet.abs().max(1.0));
    }

    #[test]
    fn selected_inverse_matches_dense_inverse() {
        let a = random_spd(30, 0.15, 3);
        let f = EnvelopeCholesky::factor_with(&a, (0..30).rev().collect(), 3).unwrap();
        let sel = f.selected_inverse();
        let dinv: DMatrix<f64> = a.to_dense().try_inverse().unwrap();
        let mut checked = 0;
        for i in 0..30 {
            for j in 0..30 {
                if let Some(v) = sel.get(i, j) {
                    assert!((v - dinv[(i, j)]).abs() < 1e-10, "({i},{j})");
                    checked += 1;
                }
            }
        }
        assert!(checked > 30);
        // block padding: within aligned triples of the new ordering
        for b in 0..10 {
            for r in 0..3 {
                for c in 0..3 {
                    let (i, j) = (29 - (3 * b + r), 29 - (3 * b + c));
                    assert!(sel.get(i, j).is_some());
                }
            }
        }
    }

    #[test]
    fn rejects_indefinite_with_pivot() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        match EnvelopeCholesky::factor(&a) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert!(pivot < 0.0),
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
