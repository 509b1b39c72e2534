//! Images on a pixel grid: spatial gradients, smoothing and coordinate warps.
//!
//! Axis 0 of the pixel array (rows, index `i`) is coordinate component 1 and
//! axis 1 (columns, index `j`) is component 2. Normalized coordinates are
//! `(i / (H ÷ 2) − 1, j / (H ÷ 2) − 1)` with integer division, for both axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::shape(
                format!("{} pixels for {height}x{width}", height * width),
                pixels.len(),
            ));
        }
        if let Some(index) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                pixels.push(f(i, j));
            }
        }
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pixels[i * self.width + j]
    }

    fn get_or_zero(&self, i: isize, j: isize) -> f64 {
        if i < 0 || j < 0 || i >= self.height as isize || j >= self.width as isize {
            0.0
        } else {
            self.pixels[i as usize * self.width + j as usize]
        }
    }

    /// Bilinear interpolation at fractional pixel position, zero outside the image.
    pub fn sample_bilinear(&self, r: f64, c: f64) -> f64 {
        let r0 = r.floor();
        let c0 = c.floor();
        let (fr, fc) = (r - r0, c - c0);
        let (i, j) = (r0 as isize, c0 as isize);
        (1.0 - fr) * (1.0 - fc) * self.get_or_zero(i, j)
            + (1.0 - fr) * fc * self.get_or_zero(i, j + 1)
            + fr * (1.0 - fc) * self.get_or_zero(i + 1, j)
            + fr * fc * self.get_or_zero(i + 1, j + 1)
    }

    pub fn l1_distance(&self, other: &Image) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.pixels.iter().map(|v| v.abs()).sum()
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }
}

/// Normalized pixel coordinates shared by polarization and warping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::InvalidArgument(format!(
                "image grid needs at least 2x2 pixels, got {height}x{width}"
            )));
        }
        Ok(Self { height, width })
    }

    pub fn for_image(img: &Image) -> Result<Self> {
        Self::new(img.height(), img.width())
    }

    fn half(&self) -> f64 {
        (self.height / 2) as f64
    }

    pub fn coord(&self, i: usize, j: usize) -> [f64; 2] {
        let d = self.half();
        [i as f64 / d - 1.0, j as f64 / d - 1.0]
    }

    /// Fractional pixel position of a normalized coordinate.
    pub fn pixel_of(&self, c: [f64; 2]) -> (f64, f64) {
        let d = self.half();
        ((c[0] + 1.0) * d, (c[1] + 1.0) * d)
    }
}

/// Forward differences on the `(H−1)×(W−1)` crop, row-major; entry 0 is the
/// difference along axis 0.
pub fn image_gradients(img: &Image) -> Result<Vec<[f64; 2]>> {
    let (h, w) = (img.height(), img.width());
    if h < 2 || w < 2 {
        return Err(Error::InvalidArgument(format!(
            "image gradients need at least 2 pixels per axis, got {h}x{w}"
        )));
    }
    let mut out = Vec::with_capacity((h - 1) * (w - 1));
    for i in 0..h - 1 {
        for j in 0..w - 1 {
            let base = img.get(i, j);
            out.push([img.get(i + 1, j) - base, img.get(i, j + 1) - base]);
        }
    }
    Ok(out)
}

/// Symmetric reflection (edge pixel repeated) of an index into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Truncated Gaussian kernel of radius `ceil(3σ)`, normalized to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with reflect padding; `sigma = 0` is the identity.
pub fn gaussian_smooth(img: &Image, sigma: f64) -> Result<Image> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "smoothing sigma must be non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (h, w) = (img.height(), img.width());

    let mut tmp = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            tmp[i * w + j] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * img.get(i, reflect(j as isize + k as isize - radius, w)))
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[reflect(i as isize + k as isize - radius, h) * w + j])
                .sum();
        }
    }
    Image::new(h, w, out)
}

/// Output pixel at normalized coordinate `c` takes the input value at
/// `pullback · c` (bilinear, zero outside the input).
pub fn warp_image(img: &Image, pullback: &Matrix) -> Result<Image> {
    if pullback.shape() != (2, 2) {
        return Err(Error::shape(
            "2x2 coordinate map",
            format!("{}x{}", pullback.rows(), pullback.cols()),
        ));
    }
    let grid = ImageGrid::for_image(img)?;
    let m = pullback;
    Ok(Image::from_fn(img.height(), img.width(), |i, j| {
        let c = grid.coord(i, j);
        let src = [
            m[(0, 0)] * c[0] + m[(0, 1)] * c[1],
            m[(1, 0)] * c[0] + m[(1, 1)] * c[1],
        ];
        let (r, cc) = grid.pixel_of(src);
        img.sample_bilinear(r, cc)
    }))
}
