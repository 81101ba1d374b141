//! Whitespace-separated numeric matrix files and small TSV helpers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Parses a whitespace-separated matrix, one row per non-empty line. Lines
/// starting with `#` are skipped.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    parse(text, false)
}

/// Like [`parse_matrix`] but accepts `NaN`, which marks undefined estimates
/// in result files.
pub fn parse_estimates(text: &str) -> Result<DMatrix<f64>> {
    parse(text, true)
}

pub fn read_estimates(path: &Path) -> Result<DMatrix<f64>> {
    parse_estimates(&fs::read_to_string(path)?)
}

fn parse(text: &str, allow_nan: bool) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|e| Error::parse(lineno + 1, format!("{tok:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    lineno + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        if row.iter().any(|v| v.is_infinite() || (v.is_nan() && !allow_nan)) {
            return Err(Error::parse(lineno + 1, "non-finite value"));
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&fs::read_to_string(path)?)
}

/// Formats with shortest round-trip representation so a read-back is exact.
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(m.nrows() * m.ncols() * 12);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{}", m[(i, j)]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_matrix(m))?;
    Ok(())
}

/// Tab-separated table with a header row.
pub fn format_tsv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_rows_rejected() {
        assert!(matches!(parse_matrix("1 2\n3\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn roundtrip_exact() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, -1e-300, 1.0 / 3.0, 2.5e10]);
        assert_eq!(parse_matrix(&format_matrix(&m)).unwrap(), m);
    }

    #[test]
    fn nan_only_in_estimates() {
        assert!(parse_matrix("1 NaN\n").is_err());
        let m = parse_estimates("1 NaN\n").unwrap();
        assert!(m[(0, 1)].is_nan());
        assert!(parse_estimates("inf 1\n").is_err());
    }
}
