//! Generators, symmetry variance, symmetry bias and invariance estimates.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, matrix_exp, skew_project, svd, Matrix, SvdResult};
use crate::net::Discriminator;
use crate::polarization::{warp_image, Image, InputAction, PolarizationMatrix};

/// Extracted generators, ordered by ascending singular value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LieAlgebraBasis {
    pub generators: Vec<Matrix>,
    pub singular_values: Vec<f64>,
    pub gen_dim: usize,
}

/// The SVD of a polarization matrix, computed once and queried many times.
#[derive(Clone, Debug)]
pub struct SymmetryAnalysis {
    svd: SvdResult,
    gen_dim: usize,
    sample_count: usize,
}

impl SymmetryAnalysis {
    pub fn new(e: &PolarizationMatrix) -> Result<Self> {
        Ok(Self {
            svd: svd(e.matrix())?,
            gen_dim: e.gen_dim(),
            sample_count: e.sample_count(),
        })
    }

    pub fn svd(&self) -> &SvdResult {
        &self.svd
    }

    /// Singular values, descending.
    pub fn spectrum(&self) -> &[f64] {
        &self.svd.singular_values
    }

    pub fn gen_dim(&self) -> usize {
        self.gen_dim
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// `σ_min² / |D|`, with σ zero-padded when E has fewer rows than columns.
    pub fn variance(&self) -> f64 {
        let s = self.svd.sigma_min();
        s * s / self.sample_count as f64
    }

    /// Mean of `σ² / |D|` over the `k` smallest singular values.
    pub fn mean_variance(&self, k: usize) -> f64 {
        let s = &self.svd.singular_values;
        let k = k.clamp(1, s.len());
        s[s.len() - k..].iter().map(|v| v * v).sum::<f64>() / (k * self.sample_count) as f64
    }

    /// Number of singular values below `rel_tol · σ_max`.
    pub fn null_dim(&self, rel_tol: f64) -> usize {
        linalg::nullspace_from_svd(&self.svd, rel_tol).len()
    }

    pub fn generators(&self, k: usize) -> Result<LieAlgebraBasis> {
        let n2 = self.gen_dim * self.gen_dim;
        if k == 0 || k > n2 {
            return Err(Error::InvalidArgument(format!(
                "generator count {k} outside 1..={n2}"
            )));
        }
        let mut generators = Vec::with_capacity(k);
        let mut singular_values = Vec::with_capacity(k);
        for col in (n2 - k..n2).rev() {
            let v = self.svd.right_vector(col);
            generators.push(Matrix::from_raw(self.gen_dim, self.gen_dim, v));
            singular_values.push(self.svd.singular_values[col]);
        }
        Ok(LieAlgebraBasis {
            generators,
            singular_values,
            gen_dim: self.gen_dim,
        })
    }

    /// `(1/|D|) Σ_l σ_l² (Vᵀ vec(h))_l²`.
    pub fn invariance_estimate(&self, h: &Matrix) -> Result<f64> {
        let n = self.gen_dim;
        if h.shape() != (n, n) {
            return Err(Error::shape(
                format!("{n}x{n}"),
                format!("{}x{}", h.rows(), h.cols()),
            ));
        }
        let v = &self.svd.v;
        let coeffs = v.transpose().matvec(h.as_slice())?;
        Ok(coeffs
            .iter()
            .zip(&self.svd.singular_values)
            .map(|(c, s)| s * s * c * c)
            .sum::<f64>()
            / self.sample_count as f64)
    }
}

pub fn extract_generators(e: &PolarizationMatrix, k: usize) -> Result<LieAlgebraBasis> {
    SymmetryAnalysis::new(e)?.generators(k)
}

pub fn symmetry_variance(e: &PolarizationMatrix) -> Result<f64> {
    Ok(SymmetryAnalysis::new(e)?.variance())
}

pub fn invariance_estimate(e: &PolarizationMatrix, h: &Matrix) -> Result<f64> {
    SymmetryAnalysis::new(e)?.invariance_estimate(h)
}

/// `‖E · vec(h)‖² / |D|`, computed without the SVD.
pub fn invariance_direct_product(e: &PolarizationMatrix, h: &Matrix) -> Result<f64> {
    let n = e.gen_dim();
    if h.shape() != (n, n) {
        return Err(Error::shape(
            format!("{n}x{n}"),
            format!("{}x{}", h.rows(), h.cols()),
        ));
    }
    let eh = e.matrix().matvec(h.as_slice())?;
    Ok(linalg::dot(&eh, &eh) / e.sample_count() as f64)
}

type Projector = dyn Fn(&Matrix) -> Result<Matrix> + Send + Sync;

/// Maps a candidate generator to the nearest generator of a ground-truth group.
#[derive(Clone)]
pub enum GroupProjector {
    /// Rotations: the nearest generator is the skew-symmetric part.
    SpecialOrthogonal,
    Custom(Arc<Projector>),
}

impl fmt::Debug for GroupProjector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupProjector::SpecialOrthogonal => write!(f, "SpecialOrthogonal"),
            GroupProjector::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl GroupProjector {
    pub fn project(&self, a: &Matrix) -> Result<Matrix> {
        let p = match self {
            GroupProjector::SpecialOrthogonal => skew_project(a)?,
            GroupProjector::Custom(f) => f(a)?,
        };
        if p.shape() != a.shape() {
            return Err(Error::shape(
                format!("projection of shape {}x{}", a.rows(), a.cols()),
                format!("{}x{}", p.rows(), p.cols()),
            ));
        }
        Ok(p)
    }
}

/// Frobenius distance of each generator to its projection onto the ground-truth algebra.
pub fn symmetry_bias(basis: &LieAlgebraBasis, group: &GroupProjector) -> Result<Vec<f64>> {
    basis
        .generators
        .iter()
        .map(|g| linalg::frobenius_distance(g, &group.project(g)?))
        .collect()
}

/// Absolute cosine of the Frobenius angle between two matrices.
pub fn cosine_similarity(a: &Matrix, b: &Matrix) -> Result<f64> {
    let denom = a.frobenius_norm() * b.frobenius_norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((a.inner(b)? / denom).abs())
}

/// The unit-norm generator of planar rotations, `[[0, 1], [−1, 0]] / √2`.
pub fn unit_rotation_generator() -> Matrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Matrix::from_raw(2, 2, vec![0.0, s, -s, 0.0])
}

/// Data on which a transformation can be applied directly.
#[derive(Clone, Copy, Debug)]
pub enum Dataset<'a> {
    Vectors {
        data: &'a Matrix,
        action: InputAction,
    },
    Images(&'a [Image]),
}

impl Dataset<'_> {
    fn len(&self) -> usize {
        match self {
            Dataset::Vectors { data, .. } => data.rows(),
            Dataset::Images(images) => images.len(),
        }
    }
}

/// Empirical mean of `‖F(exp(t·h)·x) − F(x)‖²` over a dataset.
///
/// Images are transformed as `x ↦ f(exp(t·h)·x)` on normalized coordinates with
/// bilinear resampling.
pub fn direct_invariance<D: Discriminator + ?Sized>(
    net: &D,
    dataset: Dataset<'_>,
    h: &Matrix,
    t: f64,
) -> Result<f64> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let g = matrix_exp(h, t)?;
    let squared: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (before, after) = match dataset {
                Dataset::Vectors { data, action } => {
                    let x = data.row(i);
                    (net.forward(x)?, net.forward(&action.act(&g, x)?)?)
                }
                Dataset::Images(images) => {
                    let img = &images[i];
                    let moved = warp_image(img, &g)?;
                    (net.forward(img.pixels())?, net.forward(moved.pixels())?)
                }
            };
            Ok(before
                .iter()
                .zip(&after)
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(squared.iter().sum::<f64>() / n as f64)
}

/// Transports an image along the one-parameter group `exp(t·h)`: the output at
/// coordinate `c` is the input at `exp(−t·h)·c`.
pub fn apply_generator_image(img: &Image, h: &Matrix, t: f64) -> Result<Image> {
    if h.shape() != (2, 2) {
        return Err(Error::shape(
            "2x2 generator",
            format!("{}x{}", h.rows(), h.cols()),
        ));
    }
    warp_image(img, &matrix_exp(h, -t)?)
}

/// Scores of one extraction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub variance: f64,
    /// Mean `σ²/|D|` over the extracted generators.
    pub mean_variance: f64,
    pub biases: Vec<f64>,
    pub mean_bias: f64,
    pub min_bias: f64,
    /// Singular values of E, descending.
    pub singular_spectrum: Vec<f64>,
    /// Singular values below the relative nullspace threshold.
    pub null_dim: usize,
    pub rel_tol: f64,
    pub sample_count: usize,
    pub gen_dim: usize,
    pub generators: Vec<Matrix>,
    pub generator_singular_values: Vec<f64>,
}

impl SymmetryReport {
    pub fn from_analysis(
        analysis: &SymmetryAnalysis,
        k: usize,
        group: &GroupProjector,
        rel_tol: f64,
    ) -> Result<Self> {
        let basis = analysis.generators(k)?;
        let biases = symmetry_bias(&basis, group)?;
        let mean_bias = biases.iter().sum::<f64>() / biases.len() as f64;
        let min_bias = biases.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            variance: analysis.variance(),
            mean_variance: analysis.mean_variance(k),
            mean_bias,
            min_bias,
            biases,
            singular_spectrum: analysis.spectrum().to_vec(),
            null_dim: analysis.null_dim(rel_tol),
            rel_tol,
            sample_count: analysis.sample_count(),
            gen_dim: analysis.gen_dim(),
            generators: basis.generators,
            generator_singular_values: basis.singular_values,
        })
    }

    pub fn compute(
        e: &PolarizationMatrix,
        k: usize,
        group: &GroupProjector,
        rel_tol: f64,
    ) -> Result<Self> {
        Self::from_analysis(&SymmetryAnalysis::new(e)?, k, group, rel_tol)
    }
}
