//! Benchmark data: the O(5)-invariant regression task, sphere point clouds,
//! IDX image files and a synthetic rotated-shapes image set.

mod idx;
mod shapes;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, norm, Matrix};
use crate::net::Targets;
use crate::polarization::Image;

pub use idx::{
    decode_idx_images, decode_idx_labels, encode_idx_images, encode_idx_labels, load_idx,
    save_image_set, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use shapes::{gen_rotated_shapes, render_template, rotate_augment, rotate_image};

/// Inputs are `(x₁, x₂)` concatenated, both in ℝ⁵.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionSet {
    pub inputs: Matrix,
    pub targets: Vec<f64>,
}

impl RegressionSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn target_matrix(&self) -> Targets {
        Targets::Values(Matrix::from_raw(self.len(), 1, self.targets.clone()))
    }
}

/// `sin‖x₁‖ − ½‖x₂‖³ + x₁ᵀx₂ / (‖x₁‖‖x₂‖)` for a length-10 input.
pub fn o5_target(x: &[f64]) -> f64 {
    let (x1, x2) = x.split_at(5);
    let (n1, n2) = (norm(x1), norm(x2));
    n1.sin() - 0.5 * n2.powi(3) + dot(x1, x2) / (n1 * n2)
}

const MIN_BLOCK_NORM: f64 = 1e-6;

/// `n` samples with i.i.d. `N(0, input_std²)` coordinates. Samples where
/// either half has norm below 1e-6 are redrawn.
pub fn gen_o5(n: usize, seed: u64, input_std: f64) -> RegressionSet {
    let normal = Normal::new(0.0, input_std).expect("input_std must be positive and finite");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * 10);
    let mut targets = Vec::with_capacity(n);
    while targets.len() < n {
        let x: Vec<f64> = (0..10).map(|_| normal.sample(&mut rng)).collect();
        if norm(&x[..5]) < MIN_BLOCK_NORM || norm(&x[5..]) < MIN_BLOCK_NORM {
            continue;
        }
        targets.push(o5_target(&x));
        data.extend(x);
    }
    RegressionSet {
        inputs: Matrix::from_raw(n, 10, data),
        targets,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphereSampling {
    /// Normalized Gaussian vectors.
    Uniform,
    /// Cycles through `+e₀, −e₀, +e₁, −e₁, …`.
    AxisAligned,
}

/// Points on the unit sphere in ℝ^dim, one per row.
pub fn gen_sphere(n_points: usize, dim: usize, seed: u64, sampling: SphereSampling) -> Matrix {
    assert!(dim >= 2, "sphere dimension must be at least 2");
    let mut data = Vec::with_capacity(n_points * dim);
    match sampling {
        SphereSampling::Uniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            while data.len() < n_points * dim {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = norm(&v);
                if n < 1e-9 {
                    continue;
                }
                data.extend(v.iter().map(|x| x / n));
            }
        }
        SphereSampling::AxisAligned => {
            for p in 0..n_points {
                let mut v = vec![0.0; dim];
                v[(p / 2) % dim] = if p % 2 == 0 { 1.0 } else { -1.0 };
                data.extend(v);
            }
        }
    }
    Matrix::from_raw(n_points, dim, data)
}

/// Labeled images. `angles` is empty for sets not produced by rotation augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub angles: Vec<f64>,
    pub sigma_smooth: f64,
    pub seed: Option<u64>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn height(&self) -> usize {
        self.images.first().map_or(0, |im| im.height())
    }

    pub fn width(&self) -> usize {
        self.images.first().map_or(0, |im| im.width())
    }

    /// Pixels flattened row-major, one image per row.
    pub fn input_matrix(&self) -> Matrix {
        let n = self.height() * self.width();
        Matrix::from_raw(
            self.len(),
            n,
            self.images
                .iter()
                .flat_map(|im| im.pixels().iter().copied())
                .collect(),
        )
    }

    pub fn targets(&self) -> Targets {
        Targets::Classes(self.labels.clone())
    }

    /// Consecutive slice `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> ImageSet {
        ImageSet {
            images: self.images[start..end].to_vec(),
            labels: self.labels[start..end].to_vec(),
            classes: self.classes,
            angles: if self.angles.is_empty() {
                Vec::new()
            } else {
                self.angles[start..end].to_vec()
            },
            sigma_smooth: self.sigma_smooth,
            seed: self.seed,
        }
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}
