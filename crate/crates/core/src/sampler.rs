//! Generative pipelines built on the empirical score.
//!
//! The IDM sampler runs the reverse probability-flow ODE of the smoothed
//! empirical measure from the horizon T down to the stopping time h^2 and
//! then applies the inertia update, which maps the noisy state to a
//! Nadaraya-Watson average of the training points. The short-circuit path
//! skips the ODE and draws the state at h^2 directly from the mixture,
//! which has the same law.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::PointCloud;
use crate::rng::{substream, Domain, StreamRng};
use crate::score::{nw_estimate, schedule_at, score_at, BandwidthPlan, SchedulePoint};

/// Multiplier on the log terms of the default horizon.
pub const HORIZON_FACTOR: f64 = 2.0;
pub const DEFAULT_ODE_STEPS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitMode {
    /// Start from the smoothed empirical measure at time T.
    EmpiricalPT,
    StandardGaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepSchedule {
    /// `t_j = T * (h^2 / T)^{j / steps}`.
    GeometricInTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathMode {
    #[serde(rename = "full_ode", alias = "FullODE")]
    FullOde,
    #[serde(rename = "short_circuit", alias = "ShortCircuit")]
    ShortCircuit,
}

impl std::str::FromStr for PathMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full_ode" | "fullode" => Ok(PathMode::FullOde),
            "short_circuit" | "shortcircuit" => Ok(PathMode::ShortCircuit),
            _ => Err(Error::Config(format!("unknown path mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub plan: BandwidthPlan,
    pub horizon: f64,
    pub init_mode: InitMode,
    pub ode_steps: usize,
    pub step_schedule: StepSchedule,
    pub path_mode: PathMode,
}

/// `k_T * (ln n + ln D + ln diam)` with `k_T = HORIZON_FACTOR`.
pub fn default_horizon(n: usize, ambient_dim: usize, diameter: f64) -> f64 {
    HORIZON_FACTOR * ((n as f64).ln() + (ambient_dim as f64).ln() + diameter.ln())
}

impl SamplerConfig {
    /// Defaults: horizon from [`default_horizon`], empirical init, 200 RK4
    /// steps, short-circuit path.
    pub fn new(plan: BandwidthPlan, ambient_dim: usize, diameter: f64) -> Result<Self> {
        let cfg = Self {
            plan,
            horizon: default_horizon(plan.n, ambient_dim, diameter),
            init_mode: InitMode::EmpiricalPT,
            ode_steps: DEFAULT_ODE_STEPS,
            step_schedule: StepSchedule::GeometricInTime,
            path_mode: PathMode::ShortCircuit,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_path_mode(mut self, mode: PathMode) -> Self {
        self.path_mode = mode;
        self
    }

    pub fn with_ode_steps(mut self, steps: usize) -> Self {
        self.ode_steps = steps;
        self
    }

    pub fn with_init_mode(mut self, mode: InitMode) -> Self {
        self.init_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let stop = self.plan.stop_time();
        if !(stop > 0.0) {
            return Err(Error::Config("stopping time h^2 must be positive".into()));
        }
        if !(self.horizon > stop) {
            return Err(Error::Config(format!(
                "horizon {} must exceed h^2 = {stop}",
                self.horizon
            )));
        }
        if self.ode_steps == 0 {
            return Err(Error::Config("ode_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "IDM")]
    Idm,
    Memorized,
    EarlyStopped,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Idm => "IDM",
            Method::Memorized => "Memorized",
            Method::EarlyStopped => "EarlyStopped",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub samples: PointCloud,
    pub config: Option<SamplerConfig>,
    pub seed: u64,
    pub method: Method,
}

fn check_data(data: &PointCloud) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    Ok(())
}

/// One draw `alpha_t X_U + sigma_t xi` from the smoothed empirical measure.
fn mixture_draw(data: &PointCloud, sp: SchedulePoint, rng: &mut StreamRng) -> Vec<f64> {
    let u = rng.random_range(0..data.len());
    data.row(u)
        .iter()
        .map(|x| sp.alpha * x + sp.sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn collect_rows(dim: usize, rows: Vec<Vec<f64>>) -> Result<PointCloud> {
    let mut flat = Vec::with_capacity(dim * rows.len());
    rows.into_iter().for_each(|r| flat.extend(r));
    if flat.is_empty() {
        return Ok(PointCloud::new(dim));
    }
    PointCloud::from_flat(dim, flat)
}

/// `count` independent draws from p̂_t. Sample k uses stream k of `seed`.
pub fn forward_noise(data: &PointCloud, t: f64, count: usize, seed: u64) -> Result<SampleBatch> {
    check_data(data)?;
    if !(t > 0.0) {
        return Err(Error::Domain(format!(
            "forward noising needs t > 0, got {t}"
        )));
    }
    let sp = schedule_at(t)?;
    let rows: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|k| mixture_draw(data, sp, &mut substream(seed, Domain::Sampler, k as u64)))
        .collect();
    Ok(SampleBatch {
        samples: collect_rows(data.dim(), rows)?,
        config: None,
        seed,
        method: Method::EarlyStopped,
    })
}

/// Geometric time grid from `t_start` down to `t_end`, endpoints exact.
pub fn geometric_grid(t_start: f64, t_end: f64, steps: usize) -> Vec<f64> {
    let ratio = t_end / t_start;
    let mut grid: Vec<f64> = (0..=steps)
        .map(|j| t_start * ratio.powf(j as f64 / steps as f64))
        .collect();
    grid[0] = t_start;
    grid[steps] = t_end;
    grid
}

/// Probability-flow drift in physical time: `dZ/dt = -Z - score_t(Z)`.
fn drift(z: &[f64], t: f64, data: &PointCloud) -> Vec<f64> {
    let sp = schedule_at(t).expect("grid times are positive");
    let s = score_at(z, sp, data);
    z.iter().zip(&s).map(|(zi, si)| -zi - si).collect()
}

fn axpy(z: &[f64], k: &[f64], h: f64) -> Vec<f64> {
    z.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Integrate the reverse ODE from `t_start` down to `t_end` with classical
/// RK4 on a geometric grid.
pub fn reverse_ode(
    z0: &[f64],
    t_start: f64,
    t_end: f64,
    data: &PointCloud,
    steps: usize,
) -> Result<Vec<f64>> {
    check_data(data)?;
    if z0.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: z0.len(),
        });
    }
    if !(t_end > 0.0 && t_start > t_end) {
        return Err(Error::Domain(format!(
            "need t_start > t_end > 0, got {t_start} -> {t_end}"
        )));
    }
    if steps == 0 {
        return Err(Error::Config("need at least one step".into()));
    }
    let grid = geometric_grid(t_start, t_end, steps);
    let mut z = z0.to_vec();
    for (step, w) in grid.windows(2).enumerate() {
        let (t0, t1) = (w[0], w[1]);
        let dt = t1 - t0;
        let tm = 0.5 * (t0 + t1);
        let k1 = drift(&z, t0, data);
        let k2 = drift(&axpy(&z, &k1, 0.5 * dt), tm, data);
        let k3 = drift(&axpy(&z, &k2, 0.5 * dt), tm, data);
        let k4 = drift(&axpy(&z, &k3, dt), t1, data);
        for (i, zi) in z.iter_mut().enumerate() {
            *zi += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step, sample: None });
        }
    }
    Ok(z)
}

/// Inertia update, computed as `nw_estimate(z / alpha, sigma / alpha, data)`
/// at time `h^2`.
pub fn inertia_update(z: &[f64], h: f64, data: &PointCloud) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!(
            "inertia update needs h > 0, got {h}"
        )));
    }
    let sp = schedule_at(h * h)?;
    let scaled: Vec<f64> = z.iter().map(|v| v / sp.alpha).collect();
    nw_estimate(&scaled, sp.sigma / sp.alpha, data)
}

/// The same map in its raw form `(z + sigma^2 score(z)) / alpha`.
pub fn inertia_update_raw(z: &[f64], h: f64, data: &PointCloud) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!(
            "inertia update needs h > 0, got {h}"
        )));
    }
    let t = h * h;
    let sp = schedule_at(t)?;
    let s = crate::score::empirical_score(z, t, data)?;
    Ok(z.iter()
        .zip(&s)
        .map(|(zi, si)| (zi + sp.variance() * si) / sp.alpha)
        .collect())
}

fn idm_one(data: &PointCloud, cfg: &SamplerConfig, seed: u64, k: usize) -> Result<Vec<f64>> {
    let mut rng = substream(seed, Domain::Sampler, k as u64);
    let stop = cfg.plan.stop_time();
    let z = match cfg.path_mode {
        PathMode::ShortCircuit => mixture_draw(data, schedule_at(stop)?, &mut rng),
        PathMode::FullOde => {
            let z0 = match cfg.init_mode {
                InitMode::EmpiricalPT => mixture_draw(data, schedule_at(cfg.horizon)?, &mut rng),
                InitMode::StandardGaussian => (0..data.dim())
                    .map(|_| rng.sample(StandardNormal))
                    .collect(),
            };
            reverse_ode(&z0, cfg.horizon, stop, data, cfg.ode_steps).map_err(|e| match e {
                Error::Divergence { step, .. } => Error::Divergence {
                    step,
                    sample: Some(k),
                },
                other => other,
            })?
        }
    };
    inertia_update(&z, cfg.plan.h, data)
}

/// Inertial diffusion samples. Sample k depends only on `(seed, k)`.
pub fn idm_sample(
    data: &PointCloud,
    config: &SamplerConfig,
    count: usize,
    seed: u64,
) -> Result<SampleBatch> {
    check_data(data)?;
    config.validate()?;
    let rows: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|k| idm_one(data, config, seed, k))
        .collect::<Result<_>>()?;
    Ok(SampleBatch {
        samples: collect_rows(data.dim(), rows)?,
        config: Some(*config),
        seed,
        method: Method::Idm,
    })
}

/// Memorizing baseline: resample training rows uniformly with replacement.
pub fn memorized_sample(data: &PointCloud, count: usize, seed: u64) -> Result<SampleBatch> {
    check_data(data)?;
    let mut flat = Vec::with_capacity(count * data.dim());
    for k in 0..count {
        let u = substream(seed, Domain::Memorized, k as u64).random_range(0..data.len());
        flat.extend_from_slice(data.row(u));
    }
    let samples = if flat.is_empty() {
        PointCloud::new(data.dim())
    } else {
        PointCloud::from_flat(data.dim(), flat)?
    };
    Ok(SampleBatch {
        samples,
        config: None,
        seed,
        method: Method::Memorized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::bandwidth_plan;

    fn line_data() -> PointCloud {
        PointCloud::from_rows(
            3,
            [
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [-1.0, 0.5, 0.0],
                [0.3, -0.7, 0.0],
            ],
        )
        .unwrap()
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(10.0, 0.01, 7);
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], 10.0);
        assert_eq!(g[7], 0.01);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn config_defaults_and_validation() {
        let plan = bandwidth_plan(0.8, 6, 512).unwrap();
        let cfg = SamplerConfig::new(plan, 50, 4.0).unwrap();
        let expect = 2.0 * (512f64.ln() + 50f64.ln() + 4f64.ln());
        assert!((cfg.horizon - expect).abs() < 1e-12);
        assert_eq!(cfg.ode_steps, 200);
        assert_eq!(cfg.path_mode, PathMode::ShortCircuit);
        assert!(cfg.with_ode_steps(0).validate().is_err());
        let mut bad = cfg;
        bad.horizon = plan.stop_time() / 2.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_point_sampling_returns_that_point() {
        let data = PointCloud::from_rows(2, [[0.6, -0.8]]).unwrap();
        let plan = bandwidth_plan(0.8, 1, 2).unwrap();
        let mut cfg = SamplerConfig::new(plan, 2, 2.0).unwrap();
        cfg.plan.n = 1;
        for mode in [PathMode::ShortCircuit, PathMode::FullOde] {
            let b = idm_sample(&data, &cfg.with_path_mode(mode).with_ode_steps(20), 10, 3).unwrap();
            for r in b.samples.rows() {
                assert!((r[0] - 0.6).abs() < 1e-8 && (r[1] + 0.8).abs() < 1e-8);
            }
        }
        assert_eq!(
            inertia_update(&[5.0, 5.0], 0.3, &data).unwrap(),
            vec![0.6, -0.8]
        );
    }

    #[test]
    fn memorized_rows_come_from_data() {
        let data = line_data();
        let b = memorized_sample(&data, 50, 1).unwrap();
        assert_eq!(b.samples.len(), 50);
        for r in b.samples.rows() {
            assert!(data.rows().any(|x| x == r));
        }
    }

    #[test]
    fn forward_noise_is_per_index_deterministic() {
        let data = line_data();
        let small = forward_noise(&data, 0.3, 5, 9).unwrap();
        let large = forward_noise(&data, 0.3, 50, 9).unwrap();
        for k in 0..5 {
            assert_eq!(small.samples.row(k), large.samples.row(k));
        }
        assert!(forward_noise(&data, 0.0, 5, 9).is_err());
    }

    #[test]
    fn reverse_ode_rejects_bad_times() {
        let data = line_data();
        assert!(reverse_ode(&[0.0; 3], 0.1, 0.2, &data, 10).is_err());
        assert!(reverse_ode(&[0.0; 3], 1.0, 0.0, &data, 10).is_err());
    }

    #[test]
    fn path_mode_parses() {
        assert_eq!(
            "short-circuit".parse::<PathMode>().unwrap(),
            PathMode::ShortCircuit
        );
        assert_eq!("FullODE".parse::<PathMode>().unwrap(), PathMode::FullOde);
        assert!("euler".parse::<PathMode>().is_err());
    }
}
