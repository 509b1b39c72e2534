//! Singular value decomposition by one-sided Jacobi rotations.
//!
//! Tall inputs are first reduced with a Householder QR so the rotations run on
//! a `cols × cols` triangle. One-sided Jacobi keeps small singular values
//! accurate to roughly machine precision relative to the column scale, which
//! is what nullspace extraction depends on.

use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, norm, Matrix};

pub const DEFAULT_MAX_SWEEPS: usize = 80;

/// `m = U · diag(σ) · Vᵀ`.
///
/// `singular_values` always has one entry per column of the input (zero-padded
/// when the input has fewer rows than columns) and `v` is the full
/// `cols × cols` orthogonal matrix. `u` holds the left singular vectors for the
/// leading `min(rows, cols)` singular values.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    pub fn sigma_min(&self) -> f64 {
        self.singular_values.last().copied().unwrap_or(0.0)
    }

    /// Column `j` of V.
    pub fn right_vector(&self, j: usize) -> Vec<f64> {
        self.v.column(j)
    }

    pub fn reconstruct(&self) -> Matrix {
        let k = self.u.cols();
        let us = Matrix::from_fn(self.u.rows(), k, |i, j| {
            self.u[(i, j)] * self.singular_values[j]
        });
        let vt = Matrix::from_fn(k, self.v.rows(), |i, j| self.v[(j, i)]);
        us.matmul(&vt).expect("consistent svd shapes")
    }
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    svd_with_max_sweeps(m, DEFAULT_MAX_SWEEPS)
}

pub fn svd_with_max_sweeps(m: &Matrix, max_sweeps: usize) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "svd of an empty {rows}x{cols} matrix"
        )));
    }
    if let Some(index) = m.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }

    let qr = (rows > cols).then(|| HouseholderQr::new(m));
    let (work_rows, mut columns) = match &qr {
        Some(qr) => (cols, qr.r_columns()),
        None => (rows, (0..cols).map(|j| m.column(j)).collect()),
    };

    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    jacobi_sweeps(&mut columns, &mut v, max_sweeps).map_err(|sweeps| Error::SvdNoConvergence {
        rows,
        cols,
        sweeps,
    })?;

    let sigma: Vec<f64> = columns.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

    let k = rows.min(cols);
    let singular_values: Vec<f64> = order.iter().map(|&j| sigma[j]).collect();
    let mut v_sorted: Vec<Vec<f64>> = order.iter().map(|&j| v[j].clone()).collect();

    let mut u_small: Vec<Vec<f64>> = order[..k]
        .iter()
        .map(|&j| {
            let s = sigma[j];
            if s > 0.0 {
                columns[j].iter().map(|x| x / s).collect()
            } else {
                vec![0.0; work_rows]
            }
        })
        .collect();
    orthonormalize(&mut u_small, work_rows);

    for (j, vj) in v_sorted.iter_mut().enumerate() {
        if canonical_sign(vj) < 0.0 {
            vj.iter_mut().for_each(|x| *x = -*x);
            if j < k {
                u_small[j].iter_mut().for_each(|x| *x = -*x);
            }
        }
    }

    let u_columns = match &qr {
        Some(qr) => u_small.iter().map(|c| qr.apply_q(c)).collect(),
        None => u_small,
    };

    let u = Matrix::from_fn(rows, k, |i, j| u_columns[j][i]);
    let v = Matrix::from_fn(cols, cols, |i, j| v_sorted[j][i]);
    Ok(SvdResult {
        u,
        singular_values,
        v,
    })
}

/// Sign of the first entry with the largest absolute value.
fn canonical_sign(v: &[f64]) -> f64 {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).copied().unwrap_or(0.0) < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Rotates column pairs until all are mutually orthogonal; `Err` carries the sweep count.
fn jacobi_sweeps(
    columns: &mut [Vec<f64>],
    v: &mut [Vec<f64>],
    max_sweeps: usize,
) -> std::result::Result<(), usize> {
    let n = columns.len();
    let eps = f64::EPSILON;
    let mut sq: Vec<f64> = columns.iter().map(|c| dot(c, c)).collect();
    // Columns below this squared norm are rounding noise and cannot be made
    // orthogonal to the rest.
    let floor = n as f64 * eps;
    let noise = floor * floor * sq.iter().sum::<f64>();
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = sq[p];
                let beta = sq[q];
                if alpha == 0.0 || beta == 0.0 || alpha.min(beta) <= noise {
                    continue;
                }
                let gamma = dot(&columns[p], &columns[q]);
                if gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(columns, p, q, c, s);
                rotate(v, p, q, c, s);
                sq[p] = dot(&columns[p], &columns[p]);
                sq[q] = dot(&columns[q], &columns[q]);
            }
        }
        if !rotated {
            return Ok(());
        }
    }
    Err(max_sweeps)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let (a, b) = (&mut left[p], &mut right[0]);
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Modified Gram-Schmidt, completing degenerate columns from the standard basis.
fn orthonormalize(cols: &mut [Vec<f64>], dim: usize) {
    let mut next_basis = 0usize;
    for j in 0..cols.len() {
        let mut candidate = cols[j].clone();
        loop {
            for prev in cols[..j].iter() {
                let d = dot(prev, &candidate);
                candidate
                    .iter_mut()
                    .zip(prev)
                    .for_each(|(x, p)| *x -= d * p);
            }
            let n = norm(&candidate);
            if n > 1e-8 {
                candidate.iter_mut().for_each(|x| *x /= n);
                break;
            }
            candidate = vec![0.0; dim];
            candidate[next_basis % dim] = 1.0;
            next_basis += 1;
        }
        cols[j] = candidate;
    }
}

/// Householder QR of a tall matrix, reflectors stored for applying Q later.
struct HouseholderQr {
    rows: usize,
    cols: usize,
    /// Column-major copy of the reduced matrix; upper triangle is R.
    a: Vec<Vec<f64>>,
    reflectors: Vec<Vec<f64>>,
}

impl HouseholderQr {
    fn new(m: &Matrix) -> Self {
        let (rows, cols) = m.shape();
        let mut a: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
        let mut reflectors = Vec::with_capacity(cols);
        for k in 0..cols {
            let x = &a[k][k..];
            let xn = norm(x);
            let mut v = x.to_vec();
            if xn > 0.0 {
                let alpha = if x[0] >= 0.0 { -xn } else { xn };
                v[0] -= alpha;
                let vn = norm(&v);
                if vn > 0.0 {
                    v.iter_mut().for_each(|e| *e /= vn);
                }
            } else {
                v.iter_mut().for_each(|e| *e = 0.0);
            }
            for col in a.iter_mut().skip(k) {
                let seg = &mut col[k..];
                let d = 2.0 * dot(&v, seg);
                seg.iter_mut().zip(&v).for_each(|(e, vi)| *e -= d * vi);
            }
            reflectors.push(v);
        }
        Self {
            rows,
            cols,
            a,
            reflectors,
        }
    }

    fn r_columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols)
            .map(|j| {
                (0..self.cols)
                    .map(|i| if i <= j { self.a[j][i] } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    /// `Q · [x; 0]` for x of length `cols`.
    fn apply_q(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        y[..self.cols].copy_from_slice(x);
        for (k, v) in self.reflectors.iter().enumerate().rev() {
            let seg = &mut y[k..];
            let d = 2.0 * dot(v, seg);
            seg.iter_mut().zip(v).for_each(|(e, vi)| *e -= d * vi);
        }
        y
    }
}

/// Unit vectors spanning the numerical nullspace: right singular vectors with
/// `σ < rel_tol · σ_max` (every column when `σ_max = 0`).
pub fn nullspace(m: &Matrix, rel_tol: f64) -> Result<Vec<Vec<f64>>> {
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "nullspace tolerance must be positive, got {rel_tol}"
        )));
    }
    let svd = svd(m)?;
    Ok(nullspace_from_svd(&svd, rel_tol))
}

pub fn nullspace_from_svd(svd: &SvdResult, rel_tol: f64) -> Vec<Vec<f64>> {
    let smax = svd.sigma_max();
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|&(_, &s)| smax == 0.0 || s < rel_tol * smax)
        .map(|(j, _)| svd.right_vector(j))
        .collect()
}
