//! Dense real linear algebra: the matrix type, SVD and nullspaces, the matrix
//! exponential, and the small projections used to score generators.

mod expm;
mod matrix;
mod svd;

use std::io::{BufRead, Write};

pub use expm::matrix_exp;
pub use matrix::{dot, norm, Matrix};
pub(crate) use matrix::{gemm, GemmOperand};
pub use svd::{
    nullspace, nullspace_from_svd, svd, svd_with_max_sweeps, SvdResult, DEFAULT_MAX_SWEEPS,
};

use crate::error::{Error, Result};

/// Skew-symmetric part `(a − aᵀ)/2`, the closest skew matrix in Frobenius norm.
pub fn skew_project(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::shape(
            "square matrix",
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| {
        (a[(i, j)] - a[(j, i)]) / 2.0
    }))
}

/// Symmetric part `(a + aᵀ)/2`.
pub fn symmetric_part(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::shape(
            "square matrix",
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| {
        (a[(i, j)] + a[(j, i)]) / 2.0
    }))
}

pub fn frobenius_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    Ok(a.sub(b)?.frobenius_norm())
}

/// Writes one row per line, comma separated, with round-trip precision.
pub fn write_csv<W: Write>(m: &Matrix, mut out: W) -> Result<()> {
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(input: R) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {:?}: {e}", lineno + 1, s)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}
