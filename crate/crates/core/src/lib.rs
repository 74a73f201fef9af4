//! Training-free inertial diffusion sampling.
//!
//! The sampler runs the reverse probability-flow ODE driven by the exact
//! score of the Gaussian-smoothed training set and finishes with an
//! "inertia" step, which is a Nadaraya-Watson average of the training
//! points. The output interpolates the data along its underlying manifold
//! instead of reproducing the training points.
//!
//! Modules:
//! - [`manifolds`]: ground-truth data on circles, spheres and SO(m) embedded in R^D.
//! - [`score`]: noise schedule, empirical score, softmax weights, NW estimator.
//! - [`sampler`]: forward noising, reverse ODE, inertia update, IDM and baselines.
//! - [`metrics`]: debiased Sinkhorn divergence, exact W1, manifold KDE, slope fits.

pub mod error;
pub mod io;
pub mod manifolds;
pub mod metrics;
pub mod points;
pub mod rng;
pub mod sampler;
pub mod score;

pub use error::{Error, Result};
pub use manifolds::{DataSet, ManifoldKind, ManifoldSpec};
pub use points::PointCloud;
