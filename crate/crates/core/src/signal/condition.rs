use nalgebra::{DMatrix, DVector};

use super::SessionData;
use crate::Result;

/// Orthonormal basis of `[1, nuisance]` (thin QR, rank-revealing by column
/// norm).
fn nuisance_basis(nuisance: &DMatrix<f64>) -> DMatrix<f64> {
    let t = nuisance.nrows();
    let mut z = DMatrix::from_element(t, 1, 1.0);
    if nuisance.ncols() > 0 {
        z = z.insert_columns(1, nuisance.ncols(), 0.0);
        z.view_mut((0, 1), (t, nuisance.ncols())).copy_from(nuisance);
    }
    // modified Gram-Schmidt, dropping numerically dependent columns
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..z.ncols() {
        let mut v = z.column(j).into_owned();
        let scale = v.norm();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let nv = v.norm();
        if nv > 1e-10 * scale.max(1e-300) {
            basis.push(v / nv);
        }
    }
    DMatrix::from_columns(&basis)
}

fn residualize(m: &mut DMatrix<f64>, basis: &DMatrix<f64>) {
    let coef = basis.transpose() * &*m;
    *m -= basis * coef;
}

/// Percent-signal-change scaling followed by nuisance regression.
///
/// Each vertex is rescaled to `100 (y − ȳ) / ȳ`; vertices with a non-positive
/// mean are flagged invalid and zeroed. The intercept and nuisance columns
/// are then projected out of both BOLD and task design. Re-running on already
/// conditioned data skips the rescaling, and the projection is idempotent.
pub fn condition(session: &SessionData) -> Result<SessionData> {
    let mut out = session.clone();
    if !out.percent_signal {
        for (v, mut col) in out.bold.column_iter_mut().enumerate() {
            let mean = col.mean();
            if mean > 0.0 {
                col.iter_mut().for_each(|y| *y = 100.0 * (*y - mean) / mean);
            } else {
                if out.valid[v] {
                    log::warn!("vertex {v} has non-positive mean intensity; excluded");
                }
                out.valid[v] = false;
                col.fill(0.0);
            }
        }
        out.percent_signal = true;
    }
    let basis = nuisance_basis(&out.nuisance);
    residualize(&mut out.bold, &basis);
    residualize(&mut out.design, &basis);
    for (v, mut col) in out.bold.column_iter_mut().enumerate() {
        if !out.valid[v] {
            col.fill(0.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SessionMeta;

    fn session(bold: DMatrix<f64>, nuisance: DMatrix<f64>) -> SessionData {
        let t = bold.nrows();
        let design = DMatrix::from_fn(t, 1, |i, _| ((i as f64) * 0.3).sin());
        SessionData::new(bold, design, nuisance, SessionMeta::default()).unwrap()
    }

    #[test]
    fn constant_series_becomes_zero() {
        let s = condition(&session(DMatrix::from_element(50, 2, 700.0), DMatrix::zeros(50, 0))).unwrap();
        assert!(s.bold.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn percent_change_amplitude() {
        let t = 400;
        let bold = DMatrix::from_fn(t, 1, |i, _| {
            500.0 * (1.0 + 0.02 * (2.0 * std::f64::consts::PI * i as f64 / 40.0).sin())
        });
        let s = condition(&session(bold, DMatrix::zeros(t, 0))).unwrap();
        let max = s.bold.column(0).max();
        assert!((max - 2.0).abs() < 1e-9, "{max}");
    }

    #[test]
    fn nuisance_orthogonality_and_idempotence() {
        let t = 120;
        let nuisance = DMatrix::from_fn(t, 2, |i, j| {
            let x = i as f64 / t as f64;
            if j == 0 { x } else { x * x }
        });
        let bold = DMatrix::from_fn(t, 3, |i, v| {
            100.0 + (i as f64 * 0.1 * (v + 1) as f64).cos() + 0.05 * i as f64
        });
        let s = condition(&session(bold, nuisance.clone())).unwrap();
        for v in 0..3 {
            for p in 0..2 {
                let nc = nuisance.column(p);
                let c = s.bold.column(v).dot(&(nc - DVector::from_element(t, nc.mean())));
                assert!(c.abs() < 1e-10);
            }
            assert!(s.bold.column(v).mean().abs() < 1e-8);
        }
        assert!(s.design.column(0).mean().abs() < 1e-8);
        let again = condition(&s).unwrap();
        assert!((again.bold - &s.bold).amax() < 1e-10);
    }

    #[test]
    fn nonpositive_mean_excluded() {
        let bold = DMatrix::from_fn(30, 2, |i, v| if v == 0 { -1.0 + 0.01 * i as f64 } else { 50.0 });
        let s = condition(&session(bold, DMatrix::zeros(30, 0))).unwrap();
        assert_eq!(s.valid, vec![false, true]);
        assert!(s.bold.column(0).iter().all(|&v| v == 0.0));
    }
}
