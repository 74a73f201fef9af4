//! OU noise schedule, the exact score of the smoothed empirical measure, and
//! the Nadaraya-Watson estimator.
//!
//! Everything that mixes Gaussian kernels over the training set is done in
//! log space: softmax weights are normalized with a max-shifted
//! log-sum-exp, which keeps D = 50, sigma ~ 0.3 well away from underflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{sq_dist, PointCloud};

/// (alpha_t, sigma_t) of the Ornstein-Uhlenbeck forward process at time t.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulePoint {
    pub t: f64,
    pub alpha: f64,
    pub sigma: f64,
}

impl SchedulePoint {
    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// `alpha = e^{-t}`, `sigma = sqrt(1 - e^{-2t})`.
pub fn schedule_at(t: f64) -> Result<SchedulePoint> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!(
            "schedule time must be finite and non-negative, got {t}"
        )));
    }
    // expm1 keeps 1 - e^{-2t} accurate for tiny t.
    let sigma = (-(-2.0 * t).exp_m1()).sqrt();
    Ok(SchedulePoint {
        t,
        alpha: (-t).exp(),
        sigma,
    })
}

/// Softmax weights over a set of kernel centers.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightVector {
    /// Normalize a vector of logits in place into log-weights.
    fn from_logits(mut logits: Vec<f64>) -> Self {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let lse = m + total.ln();
        let mut weights = Vec::with_capacity(logits.len());
        for l in logits.iter_mut() {
            *l -= lse;
            weights.push(l.exp());
        }
        Self {
            log_weights: logits,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Logits `-|z - scale * c_i|^2 / (2 sigma^2)` for every center.
fn gaussian_logits(z: &[f64], centers: &PointCloud, scale: f64, sigma: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    centers
        .rows()
        .map(|c| {
            let d2: f64 = z
                .iter()
                .zip(c)
                .map(|(a, b)| (a - scale * b) * (a - scale * b))
                .sum();
            -d2 * inv
        })
        .collect()
}

fn check_query(z: &[f64], centers: &PointCloud) -> Result<()> {
    if centers.is_empty() {
        return Err(Error::Config("need at least one center".into()));
    }
    if z.len() != centers.dim() {
        return Err(Error::DimensionMismatch {
            expected: centers.dim(),
            got: z.len(),
        });
    }
    Ok(())
}

fn check_bandwidth(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!(
            "bandwidth must be positive, got {sigma}"
        )));
    }
    Ok(())
}

/// `w_i ∝ exp(-|z - c_i|^2 / (2 sigma^2))`, normalized.
pub fn softmax_weights(z: &[f64], sigma: f64, centers: &PointCloud) -> Result<WeightVector> {
    check_query(z, centers)?;
    check_bandwidth(sigma)?;
    Ok(WeightVector::from_logits(gaussian_logits(
        z, centers, 1.0, sigma,
    )))
}

fn weighted_rows(w: &[f64], data: &PointCloud) -> Vec<f64> {
    let mut out = vec![0.0; data.dim()];
    for (wi, x) in w.iter().zip(data.rows()) {
        if *wi == 0.0 {
            continue;
        }
        for (o, xi) in out.iter_mut().zip(x) {
            *o += wi * xi;
        }
    }
    out
}

/// Nadaraya-Watson estimate `sum_i w_i(z) X_i` with Gaussian weights of width `sigma`.
pub fn nw_estimate(z: &[f64], sigma: f64, data: &PointCloud) -> Result<Vec<f64>> {
    let w = softmax_weights(z, sigma, data)?;
    Ok(weighted_rows(&w.weights, data))
}

/// log p̂_t(x) for the Gaussian mixture `(1/n) sum_i N(alpha_t X_i, sigma_t^2 I)`.
///
/// At t = 0 the measure is atomic: returns +inf on a data point and -inf
/// elsewhere.
pub fn log_density_hat(x: &[f64], t: f64, data: &PointCloud) -> Result<f64> {
    check_query(x, data)?;
    let sp = schedule_at(t)?;
    if sp.sigma == 0.0 {
        let hit = data.rows().any(|r| r == x);
        return Ok(if hit {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        });
    }
    let logits = gaussian_logits(x, data, sp.alpha, sp.sigma);
    let dim = data.dim() as f64;
    let n = data.len() as f64;
    Ok(
        -0.5 * dim * (2.0 * std::f64::consts::PI * sp.variance()).ln()
            + crate::points::log_sum_exp(&logits)
            - n.ln(),
    )
}

/// Exact gradient of [`log_density_hat`]:
/// `-(1/sigma_t^2) sum_i w_i(x) (x - alpha_t X_i)`.
pub fn empirical_score(x: &[f64], t: f64, data: &PointCloud) -> Result<Vec<f64>> {
    check_query(x, data)?;
    let sp = schedule_at(t)?;
    if !(t > 0.0) {
        return Err(Error::Domain("the empirical score needs t > 0".into()));
    }
    Ok(score_at(x, sp, data))
}

pub(crate) fn score_at(x: &[f64], sp: SchedulePoint, data: &PointCloud) -> Vec<f64> {
    let w = WeightVector::from_logits(gaussian_logits(x, data, sp.alpha, sp.sigma));
    let mean = weighted_rows(&w.weights, data);
    let inv = 1.0 / sp.variance();
    x.iter()
        .zip(&mean)
        .map(|(xi, mi)| -(xi - sp.alpha * mi) * inv)
        .collect()
}

/// Bandwidth schedule tying the sampler's stopping time to the sample size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPlan {
    pub c0: f64,
    pub d: usize,
    pub n: usize,
    /// Effective kernel width `sigma_{h^2} / alpha_{h^2} = c0 * n^{-1/(d+4)}`.
    pub sigma_prime: f64,
    pub h: f64,
    /// Set when `sigma_prime >= 1`, i.e. n is too small for the chosen c0.
    pub oversmoothed: bool,
}

impl BandwidthPlan {
    /// Stopping time h^2.
    pub fn stop_time(&self) -> f64 {
        self.h * self.h
    }
}

pub fn bandwidth_plan(c0: f64, d: usize, n: usize) -> Result<BandwidthPlan> {
    if !(c0 > 0.0) || !c0.is_finite() {
        return Err(Error::Config(format!("C0 must be positive, got {c0}")));
    }
    if d < 1 {
        return Err(Error::Config(
            "intrinsic dimension must be at least 1".into(),
        ));
    }
    if n < 2 {
        return Err(Error::Config(format!(
            "bandwidth plan needs n >= 2, got {n}"
        )));
    }
    let sigma_prime = c0 * (n as f64).powf(-1.0 / (d as f64 + 4.0));
    // sigma_{h^2} / alpha_{h^2} = sqrt(e^{2h^2} - 1)  =>  h^2 = ln(1 + sigma'^2) / 2
    let h = (0.5 * (sigma_prime * sigma_prime).ln_1p()).sqrt();
    let oversmoothed = sigma_prime >= 1.0;
    if oversmoothed {
        log::warn!("sigma' = {sigma_prime:.4} >= 1 for n = {n}, c0 = {c0}: bandwidth oversmooths");
    }
    Ok(BandwidthPlan {
        c0,
        d,
        n,
        sigma_prime,
        h,
        oversmoothed,
    })
}

/// Score of the uniform circle smoothed by the OU process, by trapezoidal
/// quadrature over the angle. Reference values for tests and diagnostics.
pub fn population_score_circle(x: &[f64], t: f64, quad_points: usize) -> Result<[f64; 2]> {
    if quad_points < 64 {
        return Err(Error::Config(format!(
            "need at least 64 quadrature nodes, got {quad_points}"
        )));
    }
    if x.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: x.len(),
        });
    }
    if !(t > 0.0) {
        return Err(Error::Domain("population score needs t > 0".into()));
    }
    let sp = schedule_at(t)?;
    let inv = 1.0 / (2.0 * sp.variance());
    let nodes: Vec<[f64; 2]> = (0..quad_points)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / quad_points as f64;
            let (s, c) = th.sin_cos();
            [sp.alpha * c, sp.alpha * s]
        })
        .collect();
    let logits: Vec<f64> = nodes.iter().map(|c| -sq_dist(x, c) * inv).collect();
    let w = WeightVector::from_logits(logits);
    let mut mean = [0.0; 2];
    for (wi, c) in w.weights.iter().zip(&nodes) {
        mean[0] += wi * c[0];
        mean[1] += wi * c[1];
    }
    let s = 1.0 / sp.variance();
    Ok([(mean[0] - x[0]) * s, (mean[1] - x[1]) * s])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_cloud(seed: u64, n: usize, dim: usize) -> PointCloud {
        let mut rng = substream(seed, Domain::Noise, 0);
        let v: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
        PointCloud::from_flat(dim, v).unwrap()
    }

    #[test]
    fn schedule_closed_forms() {
        let s0 = schedule_at(0.0).unwrap();
        assert_eq!((s0.alpha, s0.sigma), (1.0, 0.0));
        let s = schedule_at(std::f64::consts::LN_2).unwrap();
        assert!((s.alpha - 0.5).abs() < 1e-15);
        assert!((s.sigma - 0.75f64.sqrt()).abs() < 1e-15);
        assert!(schedule_at(-1e-3).is_err());
        for t in [1e-12, 1e-6, 0.3, 2.0, 30.0] {
            let s = schedule_at(t).unwrap();
            assert!((s.alpha * s.alpha + s.sigma * s.sigma - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_point_density_and_score() {
        let data = PointCloud::from_rows(3, [[0.3, -1.0, 2.0]]).unwrap();
        let t = 0.4;
        let sp = schedule_at(t).unwrap();
        let mode: Vec<f64> = data.row(0).iter().map(|v| sp.alpha * v).collect();
        let ld = log_density_hat(&mode, t, &data).unwrap();
        let expect = -1.5 * (2.0 * std::f64::consts::PI * sp.variance()).ln();
        assert!((ld - expect).abs() < 1e-13);
        let x = [1.0, 0.5, -0.5];
        let s = empirical_score(&x, t, &data).unwrap();
        for k in 0..3 {
            assert!((s[k] - (mode[k] - x[k]) / sp.variance()).abs() < 1e-12);
        }
    }

    #[test]
    fn atomic_density_at_time_zero() {
        let data = PointCloud::from_rows(1, [[1.0]]).unwrap();
        assert_eq!(log_density_hat(&[1.0], 0.0, &data).unwrap(), f64::INFINITY);
        assert_eq!(
            log_density_hat(&[0.5], 0.0, &data).unwrap(),
            f64::NEG_INFINITY
        );
        assert!(empirical_score(&[0.5], 0.0, &data).is_err());
    }

    #[test]
    fn equidistant_score_points_to_midpoint() {
        let data = PointCloud::from_rows(2, [[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let t = 0.2;
        let sp = schedule_at(t).unwrap();
        let x = [0.0, 0.7];
        let s = empirical_score(&x, t, &data).unwrap();
        assert!(s[0].abs() < 1e-14);
        assert!((s[1] - (0.0 - 0.7) / sp.variance()).abs() < 1e-12);
    }

    #[test]
    fn density_is_translation_invariant() {
        let data = random_cloud(1, 12, 4);
        let x = [0.1, 0.2, -0.3, 0.4];
        let t = 0.5;
        let alpha = schedule_at(t).unwrap().alpha;
        let c = [3.0, -2.0, 1.0, 0.5];
        let shifted_data = data.translated(&c);
        let xs: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a + alpha * b).collect();
        let a = log_density_hat(&x, t, &data).unwrap();
        let b = log_density_hat(&xs, t, &shifted_data).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn softmax_examples() {
        let centers = PointCloud::from_rows(2, [[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let w = softmax_weights(&[0.0, 3.0], 0.3, &centers).unwrap();
        assert!((w.weights[0] - 0.5).abs() < 1e-15 && (w.weights[1] - 0.5).abs() < 1e-15);
        let one = PointCloud::from_rows(2, [[4.0, 4.0]]).unwrap();
        assert_eq!(
            softmax_weights(&[0.0, 0.0], 0.01, &one).unwrap().weights,
            vec![1.0]
        );
        assert!(softmax_weights(&[0.0, 0.0], 0.0, &one).is_err());
    }

    #[test]
    fn softmax_survives_tiny_bandwidth() {
        let data = random_cloud(4, 30, 50);
        let z = vec![0.0; 50];
        let w = softmax_weights(&z, 1e-3, &data).unwrap();
        let s: f64 = w.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(w.weights.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn nw_single_point_and_symmetric_simplex() {
        let one = PointCloud::from_rows(3, [[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(
            nw_estimate(&[9.0, 9.0, 9.0], 0.1, &one).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        // Regular simplex: the standard basis of R^3, centroid (1/3, 1/3, 1/3).
        let simplex =
            PointCloud::from_rows(3, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let c = [1.0 / 3.0; 3];
        let out = nw_estimate(&c, 0.2, &simplex).unwrap();
        for v in out {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bandwidth_plan_closed_forms() {
        let p = bandwidth_plan(0.8, 6, 2048).unwrap();
        assert_eq!(p.sigma_prime, 0.8 * 2048f64.powf(-1.0 / 10.0));
        let sp = schedule_at(p.stop_time()).unwrap();
        assert!((sp.sigma / sp.alpha - p.sigma_prime).abs() < 1e-12);
        // n^{-1/(d+4)} = 1 is impossible for n >= 2, but c0 carries through linearly.
        let q = bandwidth_plan(1.0, 1, 32).unwrap();
        assert!((q.sigma_prime - 0.5).abs() < 1e-15);
        assert!(bandwidth_plan(0.8, 6, 1).is_err());
        assert!(bandwidth_plan(0.0, 6, 10).is_err());
        assert!(bandwidth_plan(5.0, 6, 4).unwrap().oversmoothed);
    }

    #[test]
    fn population_score_symmetry_and_refusal() {
        let s = population_score_circle(&[0.0, 0.0], 0.3, 256).unwrap();
        assert!(s[0].abs() < 1e-12 && s[1].abs() < 1e-12);
        assert!(population_score_circle(&[0.5, 0.5], 0.3, 63).is_err());
    }
}
