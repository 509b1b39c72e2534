//! Extraction of learned symmetries from trained feed-forward networks.
//!
//! A differentiable model `F` that fits a task acts as a discriminator of its
//! training data. Each sample contributes one linear equation in the entries of
//! a candidate infinitesimal generator `h`:
//!
//! ```text
//! Σ_ij ∂F/∂x_i · h_ij · x_j = 0
//! ```
//!
//! Stacking the equations gives the polarization matrix `E`. Its right
//! singular vectors with vanishing singular values, reshaped to matrices, span
//! the Lie algebra of transformations the model is invariant to. The smallest
//! singular value measures how invariant the model is (symmetry variance), and
//! the distance of each extracted generator to a known ground-truth algebra
//! measures how accurate the learned symmetry is (symmetry bias).
//!
//! ```
//! use liegg::datasets::{gen_sphere, SphereSampling};
//! use liegg::metrics::{extract_generators, symmetry_bias, GroupProjector};
//! use liegg::polarization::{polarization_vector, InputAction, SeedMode};
//! use liegg::net::SphereDiscriminator;
//!
//! let points = gen_sphere(200, 3, 1, SphereSampling::Uniform);
//! let e = polarization_vector(&SphereDiscriminator::new(3), &points, &SeedMode::SumOutputs, InputAction::Full).unwrap();
//! let basis = extract_generators(&e, 3).unwrap();
//! let biases = symmetry_bias(&basis, &GroupProjector::SpecialOrthogonal).unwrap();
//! assert!(biases.iter().all(|b| *b < 1e-8));
//! ```
//!
//! The [`net`] module supplies the differentiable models, [`polarization`]
//! builds `E` for vector and image data, [`metrics`] turns it into generators
//! and scores, [`datasets`] generates and loads the benchmark data and
//! [`experiments`] drives end-to-end runs behind the `liegg` binary.

pub mod datasets;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod polarization;

pub use error::{Error, Result};
pub use linalg::Matrix;

#[cfg(doctest)]
mod book {
    macro_rules! book_chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $path))]
            mod $name {}
        };
    }
    book_chapter!(intro, "introduction.md");
    book_chapter!(polarization, "polarization.md");
    book_chapter!(metrics, "metrics.md");
    book_chapter!(images, "images.md");
    book_chapter!(training, "training.md");
    book_chapter!(experiments, "experiments.md");
}
