use crate::error::{Error, Result};
use crate::linalg::matrix::Matrix;

const MAX_TERMS: usize = 40;

/// `exp(t·h)` by scaling and squaring a truncated Taylor series.
///
/// The argument is scaled by `2^-s` until its Frobenius norm is at most 1/2,
/// the series is summed until the next term drops below machine precision
/// relative to the partial sum, and the result is squared `s` times.
pub fn matrix_exp(h: &Matrix, t: f64) -> Result<Matrix> {
    if !h.is_square() {
        return Err(Error::shape(
            "square matrix",
            format!("{}x{}", h.rows(), h.cols()),
        ));
    }
    let n = h.rows();
    let a = h.scaled(t);
    let norm = a.frobenius_norm();
    if norm == 0.0 {
        return Ok(Matrix::identity(n));
    }
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let a = a.scaled(0.5f64.powi(squarings));

    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=MAX_TERMS {
        term = term.matmul(&a)?.scaled(1.0 / k as f64);
        sum = sum.add(&term)?;
        if term.frobenius_norm() <= f64::EPSILON * sum.frobenius_norm() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum)?;
    }
    Ok(sum)
}
