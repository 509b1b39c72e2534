//! The network polarization matrix.
//!
//! For vector data each equation row holds `∂F/∂x_i · x_j` flattened row-major
//! over `(i, j)`, so `E · vec(h)` is the derivative of `F(exp(t·h)·x)` at
//! `t = 0`. For images the candidate generators act on the two pixel
//! coordinates and each row has four entries
//! `C_kj = Σ_p ∂F/∂f(x_p) · ∂f/∂x_p^k · x_p^j`.

mod image;

use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::net::Discriminator;

pub use image::{gaussian_kernel, gaussian_smooth, image_gradients, warp_image, Image, ImageGrid};

/// Default cap on output components seeded separately in [`SeedMode::PerOutput`].
pub const DEFAULT_MAX_COMPONENTS: usize = 64;

/// Samples per parallel work unit. Fixed so results do not depend on thread count.
const CHUNK: usize = 256;

/// How network outputs are combined into equation rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeedMode {
    /// One row per sample from the all-ones vector-Jacobian product.
    SumOutputs,
    /// One row per output component. Outputs wider than `max_components` are
    /// replaced by that many seeded random unit directions.
    PerOutput { max_components: usize, seed: u64 },
}

impl Default for SeedMode {
    fn default() -> Self {
        SeedMode::SumOutputs
    }
}

impl SeedMode {
    pub fn per_output() -> Self {
        SeedMode::PerOutput {
            max_components: DEFAULT_MAX_COMPONENTS,
            seed: 0,
        }
    }

    /// Seed vectors for a network with `output_dim` outputs.
    pub fn seeds(&self, output_dim: usize) -> Vec<Vec<f64>> {
        match *self {
            SeedMode::SumOutputs => vec![vec![1.0; output_dim]],
            SeedMode::PerOutput { max_components, .. } if output_dim <= max_components => (0
                ..output_dim)
                .map(|k| {
                    let mut e = vec![0.0; output_dim];
                    e[k] = 1.0;
                    e
                })
                .collect(),
            SeedMode::PerOutput {
                max_components,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..max_components)
                    .map(|_| {
                        let v: Vec<f64> = (0..output_dim)
                            .map(|_| StandardNormal.sample(&mut rng))
                            .collect();
                        let n = linalg::norm(&v);
                        v.into_iter().map(|x| x / n).collect()
                    })
                    .collect()
            }
        }
    }
}

/// How an `n × n` generator acts on an input vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputAction {
    /// The generator acts on the whole input (`n = input_dim`).
    Full,
    /// The input is a concatenation of `block_dim` vectors and the same
    /// generator acts on each of them; rows sum the per-block outer products.
    Diagonal { block_dim: usize },
}

impl InputAction {
    pub fn gen_dim(&self, input_dim: usize) -> Result<usize> {
        match *self {
            InputAction::Full => Ok(input_dim),
            InputAction::Diagonal { block_dim } => {
                if block_dim == 0 || input_dim % block_dim != 0 {
                    Err(Error::InvalidArgument(format!(
                        "input of length {input_dim} does not split into blocks of {block_dim}"
                    )))
                } else {
                    Ok(block_dim)
                }
            }
        }
    }

    /// Applies the group element `g` (gen_dim × gen_dim) to `x`.
    pub fn act(&self, g: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.gen_dim(x.len())?;
        if g.shape() != (n, n) {
            return Err(Error::shape(
                format!("{n}x{n} group element"),
                format!("{}x{}", g.rows(), g.cols()),
            ));
        }
        let mut out = Vec::with_capacity(x.len());
        for block in x.chunks(n) {
            out.extend(g.matvec(block)?);
        }
        Ok(out)
    }
}

/// Provenance recorded next to an exported polarization matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarizationMeta {
    pub seed_mode: SeedMode,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Vector {
        action: InputAction,
    },
    Image {
        height: usize,
        width: usize,
        sigma_smooth: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolarizationMatrix {
    data: Matrix,
    gen_dim: usize,
    sample_count: usize,
    components: usize,
    meta: PolarizationMeta,
}

impl PolarizationMatrix {
    pub fn new(
        data: Matrix,
        gen_dim: usize,
        sample_count: usize,
        components: usize,
        meta: PolarizationMeta,
    ) -> Result<Self> {
        if data.cols() != gen_dim * gen_dim {
            return Err(Error::shape(
                format!("{} columns", gen_dim * gen_dim),
                data.cols(),
            ));
        }
        if data.rows() != sample_count * components {
            return Err(Error::shape(
                format!("{sample_count} samples x {components} rows"),
                data.rows(),
            ));
        }
        if let Some(index) = data.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            data,
            gen_dim,
            sample_count,
            components,
            meta,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn gen_dim(&self) -> usize {
        self.gen_dim
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn components_per_sample(&self) -> usize {
        self.components
    }

    pub fn meta(&self) -> &PolarizationMeta {
        &self.meta
    }

    pub fn set_sigma_smooth(&mut self, sigma: f64) {
        if let Source::Image { sigma_smooth, .. } = &mut self.meta.source {
            *sigma_smooth = Some(sigma);
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            data: self.data.scaled(c),
            ..self.clone()
        }
    }

    /// Keeps whole samples (all their rows) in the given order.
    pub fn select_samples(&self, samples: &[usize]) -> Self {
        let rows: Vec<usize> = samples
            .iter()
            .flat_map(|&s| (s * self.components)..((s + 1) * self.components))
            .collect();
        Self {
            data: self.data.select_rows(&rows),
            sample_count: samples.len(),
            ..self.clone()
        }
    }

    /// Writes the matrix as CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        linalg::write_csv(&self.data, out)
    }

    /// JSON sidecar describing the CSV.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "gen_dim": self.gen_dim,
            "sample_count": self.sample_count,
            "components_per_sample": self.components,
            "rows": self.data.rows(),
            "cols": self.data.cols(),
            "seed_mode": self.meta.seed_mode,
            "source": self.meta.source,
        })
    }
}

fn chunk_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(n)))
        .collect()
}

/// Polarization matrix of a discriminator on vector data (one sample per row of `data`).
pub fn polarization_vector<D: Discriminator + ?Sized>(
    net: &D,
    data: &Matrix,
    seed_mode: &SeedMode,
    action: InputAction,
) -> Result<PolarizationMatrix> {
    let n_in = net.input_dim();
    if data.rows() == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if data.cols() != n_in {
        return Err(Error::shape(
            format!("samples of length {n_in}"),
            data.cols(),
        ));
    }
    let g = action.gen_dim(n_in)?;
    let seeds = seed_mode.seeds(net.output_dim());
    let comps = seeds.len();
    let width = g * g;

    let chunks: Vec<Vec<f64>> = chunk_ranges(data.rows())
        .into_par_iter()
        .map(|(start, end)| {
            let idx: Vec<usize> = (start..end).collect();
            let x = data.select_rows(&idx);
            let grads = seeds
                .iter()
                .map(|s| net.input_gradients(&x, s))
                .collect::<Result<Vec<_>>>()?;
            let mut rows = vec![0.0; (end - start) * comps * width];
            for (local, sample) in (start..end).enumerate() {
                let xs = x.row(local);
                for (c, grad) in grads.iter().enumerate() {
                    let gr = grad.row(local);
                    if gr.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteGradient { sample });
                    }
                    let row = &mut rows[((local * comps) + c) * width..][..width];
                    for (gb, xb) in gr.chunks(g).zip(xs.chunks(g)) {
                        for i in 0..g {
                            for j in 0..g {
                                row[i * g + j] += gb[i] * xb[j];
                            }
                        }
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;

    let matrix = Matrix::from_raw(data.rows() * comps, width, chunks.concat());
    PolarizationMatrix::new(
        matrix,
        g,
        data.rows(),
        comps,
        PolarizationMeta {
            seed_mode: seed_mode.clone(),
            source: Source::Vector { action },
        },
    )
}

/// Polarization matrix of an image model; generators act on pixel coordinates (4 columns).
pub fn polarization_image<D: Discriminator + ?Sized>(
    net: &D,
    images: &[Image],
    grid: &ImageGrid,
    seed_mode: &SeedMode,
) -> Result<PolarizationMatrix> {
    let (h, w) = (grid.height, grid.width);
    if images.is_empty() {
        return Err(Error::InvalidArgument("empty image set".into()));
    }
    if net.input_dim() != h * w {
        return Err(Error::shape(
            format!("network input of {}", h * w),
            net.input_dim(),
        ));
    }
    if let Some(bad) = images
        .iter()
        .position(|im| im.height() != h || im.width() != w)
    {
        return Err(Error::shape(
            format!("{h}x{w} images"),
            format!(
                "image {bad} of {}x{}",
                images[bad].height(),
                images[bad].width()
            ),
        ));
    }
    let seeds = seed_mode.seeds(net.output_dim());
    let comps = seeds.len();

    let coords: Vec<[f64; 2]> = (0..h - 1)
        .flat_map(|i| (0..w - 1).map(move |j| (i, j)))
        .map(|(i, j)| grid.coord(i, j))
        .collect();

    let chunks: Vec<Vec<f64>> = chunk_ranges(images.len())
        .into_par_iter()
        .map(|(start, end)| {
            let batch = &images[start..end];
            let x = Matrix::from_raw(
                batch.len(),
                h * w,
                batch
                    .iter()
                    .flat_map(|im| im.pixels().iter().copied())
                    .collect(),
            );
            let grads = seeds
                .iter()
                .map(|s| net.input_gradients(&x, s))
                .collect::<Result<Vec<_>>>()?;
            let mut rows = vec![0.0; batch.len() * comps * 4];
            for (local, img) in batch.iter().enumerate() {
                let di = image_gradients(img)?;
                for (c, grad) in grads.iter().enumerate() {
                    let df = grad.row(local);
                    if df.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteGradient {
                            sample: start + local,
                        });
                    }
                    let row = &mut rows[(local * comps + c) * 4..][..4];
                    for i in 0..h - 1 {
                        for j in 0..w - 1 {
                            let p = i * (w - 1) + j;
                            let dfp = df[i * w + j];
                            let [g1, g2] = di[p];
                            let [x1, x2] = coords[p];
                            row[0] += dfp * g1 * x1;
                            row[1] += dfp * g1 * x2;
                            row[2] += dfp * g2 * x1;
                            row[3] += dfp * g2 * x2;
                        }
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;

    let matrix = Matrix::from_raw(images.len() * comps, 4, chunks.concat());
    PolarizationMatrix::new(
        matrix,
        2,
        images.len(),
        comps,
        PolarizationMeta {
            seed_mode: seed_mode.clone(),
            source: Source::Image {
                height: h,
                width: w,
                sigma_smooth: None,
            },
        },
    )
}

/// Number of samples kept by [`subsample_rows`].
pub fn subsample_count(sample_count: usize, fraction: f64) -> usize {
    ((fraction * sample_count as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Uniform sample of `ceil(fraction · sample_count)` samples without
/// replacement, keeping every row of a chosen sample and the original order.
pub fn subsample_rows(
    e: &PolarizationMatrix,
    fraction: f64,
    seed: u64,
) -> Result<PolarizationMatrix> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subsample fraction must be in (0, 1], got {fraction}"
        )));
    }
    let keep = subsample_count(e.sample_count(), fraction);
    if keep == 0 {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} of {} samples keeps nothing",
            e.sample_count()
        )));
    }
    if keep >= e.sample_count() {
        return Ok(e.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = index::sample(&mut rng, e.sample_count(), keep).into_vec();
    chosen.sort_unstable();
    Ok(e.select_samples(&chosen))
}
