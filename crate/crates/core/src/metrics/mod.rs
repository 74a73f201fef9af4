//! Distances between distributions and the manifold KDE.

pub mod assignment;
pub mod kde;
pub mod sinkhorn;
pub mod slope;

pub use assignment::{exact_w1_small, solve_assignment};
pub use kde::{kde_density, kde_vs_exp_sampler_check, KdeExpCheck, KdeSpec};
pub use sinkhorn::{sinkhorn_divergence, SinkhornConfig};
pub use slope::{fit_loglog_slope, LogLogFit};
