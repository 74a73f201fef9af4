//! Kernel density estimation on a manifold.
//!
//! The kernel uses Euclidean ambient distances but the d-dimensional Gaussian
//! normalizer, so it integrates to ~1 against the manifold's volume measure.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifolds::{exp_map, tangent_projection, DataSet, ManifoldKind};
use crate::points::{sq_dist, PointCloud};
use crate::rng::{substream, Domain};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeSpec {
    pub sigma: f64,
    /// Intrinsic dimension used in the kernel normalizer.
    pub d: usize,
}

impl KdeSpec {
    pub fn new(sigma: f64, d: usize) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!(
                "KDE bandwidth must be positive, got {sigma}"
            )));
        }
        if d < 1 {
            return Err(Error::Config("KDE dimension must be at least 1".into()));
        }
        Ok(Self { sigma, d })
    }

    fn log_norm(&self) -> f64 {
        -0.5 * self.d as f64 * (2.0 * std::f64::consts::PI * self.sigma * self.sigma).ln()
    }
}

/// `(1/n) sum_i (2 pi sigma^2)^{-d/2} exp(-|x - X_i|^2 / (2 sigma^2))`.
pub fn kde_density(x: &[f64], data: &PointCloud, spec: &KdeSpec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("KDE needs at least one data point".into()));
    }
    if x.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: x.len(),
        });
    }
    let inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let s: f64 = data.rows().map(|r| (-sq_dist(x, r) * inv).exp()).sum();
    Ok(spec.log_norm().exp() * s / data.len() as f64)
}

/// Both sides of the exponential-map representation of the KDE integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KdeExpCheck {
    /// Quadrature of `∫ p̂_KDE f dV` over the manifold.
    pub kde_integral: f64,
    /// Monte-Carlo mean of `f(exp_{X_U}(sigma xi_T))`.
    pub sampler_mean: f64,
    pub sampler_std_error: f64,
}

impl KdeExpCheck {
    pub fn difference(&self) -> f64 {
        (self.kde_integral - self.sampler_mean).abs()
    }
}

/// Quadrature nodes (ambient coordinates) and volume weights.
fn quadrature_grid(data: &DataSet, sigma: f64) -> Result<(PointCloud, Vec<f64>)> {
    use std::f64::consts::{PI, TAU};
    let spec = &data.spec;
    // Node spacing well below the kernel width.
    let per_turn = ((TAU * 8.0 / sigma).ceil() as usize).max(256);
    let mut nodes = PointCloud::new(spec.ambient_dim());
    let mut weights = Vec::new();
    match spec.kind() {
        ManifoldKind::Circle => {
            for k in 0..per_turn {
                let (s, c) = (TAU * k as f64 / per_turn as f64).sin_cos();
                nodes.push(&spec.embed(&[c, s]))?;
                weights.push(TAU / per_turn as f64);
            }
        }
        ManifoldKind::Sphere(2) => {
            let n_theta = per_turn / 2;
            let dth = PI / n_theta as f64;
            for a in 0..n_theta {
                let th = (a as f64 + 0.5) * dth;
                let (st, ct) = th.sin_cos();
                for b in 0..per_turn {
                    let (sp, cp) = (TAU * b as f64 / per_turn as f64).sin_cos();
                    nodes.push(&spec.embed(&[st * cp, st * sp, ct]))?;
                    weights.push(st * dth * TAU / per_turn as f64);
                }
            }
        }
        other => {
            return Err(Error::Unsupported(format!(
                "no quadrature grid for {other:?}"
            )))
        }
    }
    Ok((nodes, weights))
}

/// Compares the KDE integral of `f` with the mean of `f` over points
/// obtained by pushing training points along a Gaussian tangent step of
/// size `sigma` through the exponential map.
pub fn kde_vs_exp_sampler_check<F>(
    data: &DataSet,
    spec: &KdeSpec,
    f: F,
    count: usize,
    seed: u64,
) -> Result<KdeExpCheck>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if count < 2 {
        return Err(Error::Config("need at least two Monte-Carlo draws".into()));
    }
    let (nodes, weights) = quadrature_grid(data, spec.sigma)?;
    let kde_integral = nodes
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .zip(weights.par_iter())
        .map(|(x, w)| kde_density(x, &data.points, spec).map(|p| p * w * f(x)))
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();

    let values: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, Domain::Tangent, k as u64);
            let base = data.points.row(rng.random_range(0..data.n()));
            let xi: Vec<f64> = (0..data.ambient_dim())
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let step: Vec<f64> = tangent_projection(base, &xi, &data.spec)?
                .iter()
                .map(|v| v * spec.sigma)
                .collect();
            Ok(f(&exp_map(base, &step, &data.spec)?))
        })
        .collect::<Result<_>>()?;
    let n = count as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(KdeExpCheck {
        kde_integral,
        sampler_mean: mean,
        sampler_std_error: (var / n).sqrt(),
    })
}
