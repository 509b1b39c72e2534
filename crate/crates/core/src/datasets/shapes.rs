//! Synthetic shape images under random planar rotation.

use std::f64::consts::{FRAC_PI_2, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datasets::ImageSet;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::apply_generator_image;
use crate::polarization::{gaussian_smooth, Image, ImageGrid};

const ROUND_SIGMA: f64 = 0.16;
const BLOB_MAJOR: f64 = 0.3;
const BLOB_MINOR: f64 = 0.1;

/// `(blob count, ring radius)` for each layout, cycled by `class / 2`.
const LAYOUTS: [(usize, f64); 5] = [(1, 0.0), (2, 0.5), (3, 0.5), (2, 0.25), (4, 0.55)];

fn rotation_generator() -> Matrix {
    Matrix::from_raw(2, 2, vec![0.0, -1.0, 1.0, 0.0])
}

/// Rotates an image by `angle` radians about the centre pixel `(H/2, W/2)`.
pub fn rotate_image(img: &Image, angle: f64) -> Result<Image> {
    apply_generator_image(img, &rotation_generator(), angle)
}

/// Class `c` uses layout `c / 2 % 5` from a fixed list of blob rings. Even
/// classes draw round blobs and odd classes draw blobs elongated along the
/// ring tangent, so anisotropic deformations move samples between classes
/// while rotations do not.
pub fn render_template(class: usize, height: usize, width: usize) -> Result<Image> {
    let grid = ImageGrid::new(height, width)?;
    let (blobs, radius) = LAYOUTS[(class / 2) % LAYOUTS.len()];
    let elongated = class % 2 == 1;
    let phase = (class / (2 * LAYOUTS.len())) as f64 * 0.3;
    let (major, minor) = if elongated {
        (BLOB_MAJOR, BLOB_MINOR)
    } else {
        (ROUND_SIGMA, ROUND_SIGMA)
    };
    let centres: Vec<([f64; 2], [f64; 2])> = (0..blobs)
        .map(|k| {
            let phi = phase + TAU * k as f64 / blobs as f64;
            let axis = phi + FRAC_PI_2;
            (
                [radius * phi.cos(), radius * phi.sin()],
                [axis.cos(), axis.sin()],
            )
        })
        .collect();
    Ok(Image::from_fn(height, width, |i, j| {
        let c = grid.coord(i, j);
        centres
            .iter()
            .map(|(mu, u)| {
                let d = [c[0] - mu[0], c[1] - mu[1]];
                let a = d[0] * u[0] + d[1] * u[1];
                let b = -d[0] * u[1] + d[1] * u[0];
                (-(a * a) / (2.0 * major * major) - (b * b) / (2.0 * minor * minor)).exp()
            })
            .fold(0.0, f64::max)
    }))
}

/// Rotates every image by an angle drawn uniformly from `[0, 2π)` and then
/// smooths it with a Gaussian of width `sigma` pixels. Angles are recorded.
pub fn rotate_augment(set: &ImageSet, seed: u64, sigma: f64) -> Result<ImageSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angles: Vec<f64> = (0..set.len()).map(|_| rng.random_range(0.0..TAU)).collect();
    let images = set
        .images
        .par_iter()
        .zip(angles.par_iter())
        .map(|(img, &a)| gaussian_smooth(&rotate_image(img, a)?, sigma))
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageSet {
        images,
        labels: set.labels.clone(),
        classes: set.classes,
        angles,
        sigma_smooth: sigma,
        seed: Some(seed),
    })
}

/// `n` rotated, smoothed template images with labels cycling through the classes.
pub fn gen_rotated_shapes(
    n: usize,
    size: usize,
    classes: usize,
    seed: u64,
    sigma: f64,
) -> Result<ImageSet> {
    if classes == 0 {
        return Err(Error::InvalidArgument(
            "at least one class is required".into(),
        ));
    }
    let templates = (0..classes)
        .map(|c| render_template(c, size, size))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let base = ImageSet {
        images: labels.iter().map(|&l| templates[l].clone()).collect(),
        labels,
        classes,
        angles: Vec::new(),
        sigma_smooth: 0.0,
        seed: None,
    };
    rotate_augment(&base, seed, sigma)
}
