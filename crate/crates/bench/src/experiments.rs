//! Experiment drivers: rate and dimension sweeps, the circle illustration
//! and the score-field dump.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use idm::io::{save_batch, save_dataset};
use idm::manifolds::{distance_to_manifold, sample_manifold};
use idm::metrics::sinkhorn::{debias, entropic_ot, entropic_ot_self, EntropicOt};
use idm::metrics::{fit_loglog_slope, LogLogFit, SinkhornConfig};
use idm::rng::derive_seed;
use idm::sampler::{
    forward_noise, idm_sample, inertia_update, memorized_sample, Method, SampleBatch, SamplerConfig,
};
use idm::score::{bandwidth_plan, empirical_score};
use idm::{Error, ManifoldSpec, PointCloud, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig};
use crate::stats::{mean, median, spearman};

/// Fraction of failed cells above which a run counts as failed.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

// Tags separating the random streams of one cell.
const TAG_EMBED: u64 = 0x454d_4245_4400_0000;
const TAG_DATA: u64 = 0x4441_5441_0000_0000;
const TAG_PROXY: u64 = 0x5052_4f58_5900_0000;
const TAG_SAMPLER: u64 = 0x5341_4d50_0000_0000;

/// One measurement row of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: Experiment,
    pub method: Method,
    pub n: usize,
    #[serde(rename = "D")]
    pub ambient_dim: usize,
    pub seed: u64,
    pub w1_estimate: f64,
    pub sigma_prime: f64,
    pub wall_time_ms: u64,
}

impl ExperimentRecord {
    /// Canonical output order: method, n, D, seed.
    pub fn sort_key(&self) -> (Method, usize, usize, u64) {
        (self.method, self.n, self.ambient_dim, self.seed)
    }
}

/// A cell that could not be completed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub n: usize,
    #[serde(rename = "D")]
    pub ambient_dim: usize,
    pub seed: u64,
    pub error: String,
}

/// Seed-averaged W1 of one method at one (n, D).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanPoint {
    pub method: Method,
    pub n: usize,
    #[serde(rename = "D")]
    pub ambient_dim: usize,
    pub w1_mean: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    /// `(max - min) / median` of the seed-averaged W1 across D.
    pub flatness: f64,
    /// Spearman rank correlation between D and the seed-averaged W1.
    pub spearman: f64,
}

/// Everything a sweep produces besides the raw rows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells_total: usize,
    pub cells_failed: usize,
    pub failures: Vec<CellFailure>,
    pub means: Vec<MeanPoint>,
    /// Log-log fits of mean W1 against n (rate experiment).
    pub slopes: BTreeMap<Method, LogLogFit>,
    /// Flatness across D (dimension experiment).
    pub dimension: BTreeMap<Method, DimensionStats>,
    /// Sinkhorn solves that stopped at the iteration budget.
    pub unconverged_solves: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub records: Vec<ExperimentRecord>,
    pub summary: SweepSummary,
}

impl SweepOutcome {
    pub fn failed_fraction(&self) -> f64 {
        if self.summary.cells_total == 0 {
            return 0.0;
        }
        self.summary.cells_failed as f64 / self.summary.cells_total as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Cell {
    n: usize,
    ambient_dim: usize,
    seed: u64,
}

/// Training data, proxy draws and sampler settings of one cell. The native
/// points depend on (seed, n) only, so a D sweep re-embeds the same data.
struct CellSetup {
    data: PointCloud,
    proxy: PointCloud,
    sampler: SamplerConfig,
    sampler_seed: u64,
}

fn setup_cell(cfg: &ExperimentConfig, cell: Cell) -> Result<CellSetup> {
    let kind = cfg.manifold()?;
    let spec = ManifoldSpec::new(
        kind,
        cell.ambient_dim,
        derive_seed(cell.seed, TAG_EMBED ^ cell.ambient_dim as u64),
    )?;
    let per_n = |tag: u64| derive_seed(cell.seed, tag ^ cell.n as u64);
    let data = sample_manifold(&spec, cell.n, per_n(TAG_DATA))?.points;
    let proxy = sample_manifold(&spec, cfg.m_proxy, per_n(TAG_PROXY))?.points;
    let plan = bandwidth_plan(cfg.c0, kind.intrinsic_dim(), cell.n)?;
    let sampler =
        SamplerConfig::new(plan, cell.ambient_dim, spec.diameter())?.with_path_mode(cfg.path_mode);
    Ok(CellSetup {
        data,
        proxy,
        sampler,
        sampler_seed: per_n(TAG_SAMPLER),
    })
}

fn draw(method: Method, setup: &CellSetup, count: usize) -> Result<SampleBatch> {
    match method {
        Method::Idm => idm_sample(&setup.data, &setup.sampler, count, setup.sampler_seed),
        Method::Memorized => memorized_sample(&setup.data, count, setup.sampler_seed),
        Method::EarlyStopped => forward_noise(
            &setup.data,
            setup.sampler.plan.stop_time(),
            count,
            setup.sampler_seed,
        ),
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    cell: Cell,
    unconverged: &mut usize,
) -> Result<Vec<ExperimentRecord>> {
    let setup = setup_cell(cfg, cell)?;
    let sk: &SinkhornConfig = &cfg.sinkhorn;
    let mut note = |ot: &EntropicOt| {
        if !ot.converged {
            *unconverged += 1;
        }
    };
    let proxy_self = entropic_ot_self(&setup.proxy, sk)?;
    note(&proxy_self);
    let mut out = Vec::new();
    for method in [Method::Idm, Method::Memorized] {
        let start = Instant::now();
        let batch = draw(method, &setup, cfg.m_proxy)?;
        let cross = entropic_ot(&batch.samples, &setup.proxy, sk)?;
        let own = entropic_ot_self(&batch.samples, sk)?;
        note(&cross);
        note(&own);
        let report = debias(cross, own, proxy_self.clone());
        let wall = if cfg.record_wall_time {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        info!(
            "{} n={} D={} seed={} {method}: W1 ~ {:.6} ({wall} ms)",
            cfg.experiment, cell.n, cell.ambient_dim, cell.seed, report.divergence
        );
        out.push(ExperimentRecord {
            experiment: cfg.experiment,
            method,
            n: cell.n,
            ambient_dim: cell.ambient_dim,
            seed: cell.seed,
            w1_estimate: report.divergence,
            sigma_prime: setup.sampler.plan.sigma_prime,
            wall_time_ms: wall,
        });
    }
    Ok(out)
}

/// Runs every (n, D, seed) cell of the configuration inside the worker pool,
/// without the per-experiment summaries. Only the grid-level checks apply,
/// so a single cell can be rerun on its own.
///
/// Cells run one after another so that only one M x M cost matrix is alive
/// at a time; each cell uses the whole pool for sampling, cost assembly and
/// the Sinkhorn sweeps. All randomness is keyed by the cell, so the rows do
/// not depend on the pool size.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate_grid()?;
    cfg.check_proxy()?;
    let mut cells = Vec::new();
    for &n in &cfg.n_list {
        for &ambient_dim in &cfg.d_list {
            for &seed in &cfg.seeds {
                cells.push(Cell {
                    n,
                    ambient_dim,
                    seed,
                });
            }
        }
    }
    let pool = build_pool(cfg.workers)?;
    let mut records = Vec::new();
    let mut summary = SweepSummary {
        cells_total: cells.len(),
        ..Default::default()
    };
    pool.install(|| {
        for cell in &cells {
            let mut unconverged = 0;
            match run_cell(cfg, *cell, &mut unconverged) {
                Ok(rows) => records.extend(rows),
                Err(e) => {
                    warn!(
                        "cell n={} D={} seed={} failed: {e}",
                        cell.n, cell.ambient_dim, cell.seed
                    );
                    summary.failures.push(CellFailure {
                        n: cell.n,
                        ambient_dim: cell.ambient_dim,
                        seed: cell.seed,
                        error: e.to_string(),
                    });
                }
            }
            summary.unconverged_solves += unconverged;
        }
    });
    summary.cells_failed = summary.failures.len();
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    summary.means = seed_means(&records);
    Ok(SweepOutcome { records, summary })
}

pub fn build_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

fn seed_means(records: &[ExperimentRecord]) -> Vec<MeanPoint> {
    let mut groups: BTreeMap<(Method, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.method, r.n, r.ambient_dim))
            .or_default()
            .push(r.w1_estimate);
    }
    groups
        .into_iter()
        .map(|((method, n, ambient_dim), v)| MeanPoint {
            method,
            n,
            ambient_dim,
            w1_mean: mean(&v),
            seeds: v.len(),
        })
        .collect()
}

fn methods(means: &[MeanPoint]) -> Vec<Method> {
    let mut m: Vec<Method> = means.iter().map(|p| p.method).collect();
    m.dedup();
    m
}

/// Rate sweep over n at fixed D, with a log-log fit of the seed-averaged
/// W1 per method.
pub fn run_rate_experiment(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    if cfg.experiment != Experiment::Rate {
        return Err(Error::Config(
            "run_rate_experiment needs a rate configuration".into(),
        ));
    }
    cfg.validate()?;
    let mut out = run_sweep(cfg)?;
    for method in methods(&out.summary.means) {
        let pairs: Vec<(f64, f64)> = out
            .summary
            .means
            .iter()
            .filter(|p| p.method == method)
            .map(|p| (p.n as f64, p.w1_mean))
            .collect();
        match fit_loglog_slope(&pairs) {
            Ok(fit) => {
                out.summary.slopes.insert(method, fit);
            }
            Err(e) => warn!("{method}: no slope fit: {e}"),
        }
    }
    Ok(out)
}

/// Dimension sweep over D at fixed n, with the flatness statistic and the
/// rank correlation per method.
pub fn run_dimension_experiment(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    if cfg.experiment != Experiment::Dimension {
        return Err(Error::Config(
            "run_dimension_experiment needs a dimension configuration".into(),
        ));
    }
    cfg.validate()?;
    let mut out = run_sweep(cfg)?;
    for method in methods(&out.summary.means) {
        let pts: Vec<&MeanPoint> = out
            .summary
            .means
            .iter()
            .filter(|p| p.method == method)
            .collect();
        let w: Vec<f64> = pts.iter().map(|p| p.w1_mean).collect();
        let stats = if w.len() < 2 {
            warn!("{method}: a single D gives no spread; flatness reported as 0");
            DimensionStats {
                flatness: 0.0,
                spearman: 0.0,
            }
        } else {
            let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dims: Vec<f64> = pts.iter().map(|p| p.ambient_dim as f64).collect();
            DimensionStats {
                flatness: (hi - lo) / median(&w),
                spearman: spearman(&dims, &w),
            }
        };
        out.summary.dimension.insert(method, stats);
    }
    Ok(out)
}

/// Result of the circle illustration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleDemoSummary {
    pub training: usize,
    pub samples: usize,
    pub t: f64,
    pub median_distance_early: f64,
    pub median_distance_updated: f64,
}

/// Training points on S^1, early-stopped draws from p̂_t and their inertia
/// updates with h^2 = t, written as `training.csv`, `early_stopped.csv` and
/// `updated.csv` in `dir`.
pub fn run_circle_demo(cfg: &ExperimentConfig, dir: &Path) -> Result<CircleDemoSummary> {
    if cfg.experiment != Experiment::CircleDemo {
        return Err(Error::Config(
            "run_circle_demo needs a circle-demo configuration".into(),
        ));
    }
    cfg.validate()?;
    let demo = &cfg.circle_demo;
    let seed = cfg.seeds[0];
    let spec = ManifoldSpec::new(cfg.manifold()?, cfg.d_list[0], derive_seed(seed, TAG_EMBED))?;
    let data = sample_manifold(&spec, demo.n, derive_seed(seed, TAG_DATA))?;
    let early = forward_noise(
        &data.points,
        demo.t,
        demo.count,
        derive_seed(seed, TAG_SAMPLER),
    )?;
    let h = demo.t.sqrt();
    let updated_rows = early
        .samples
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|z| inertia_update(z, h, &data.points))
        .collect::<Result<Vec<_>>>()?;
    let updated = PointCloud::from_rows(spec.ambient_dim(), updated_rows)?;
    std::fs::create_dir_all(dir)?;
    save_dataset(&data, &dir.join("training.csv"))?;
    save_batch(&early, 0, &dir.join("early_stopped.csv"))?;
    let updated_batch = SampleBatch {
        samples: updated,
        config: None,
        seed: early.seed,
        method: Method::Idm,
    };
    save_batch(&updated_batch, 0, &dir.join("updated.csv"))?;
    let med = |c: &PointCloud| -> Result<f64> {
        Ok(median(
            &c.rows()
                .map(|r| distance_to_manifold(r, &spec))
                .collect::<Result<Vec<_>>>()?,
        ))
    };
    Ok(CircleDemoSummary {
        training: demo.n,
        samples: demo.count,
        t: demo.t,
        median_distance_early: med(&early.samples)?,
        median_distance_updated: med(&updated_batch.samples)?,
    })
}

/// Empirical score of `n` circle points on a `grid_w x grid_h` grid,
/// written as `score_field.csv` (`x,y,score_x,score_y`) next to the
/// training points in `training.csv`. Returns the number of grid rows.
pub fn run_score_field(cfg: &ExperimentConfig, dir: &Path) -> Result<usize> {
    if cfg.experiment != Experiment::ScoreField {
        return Err(Error::Config(
            "run_score_field needs a score-field configuration".into(),
        ));
    }
    cfg.validate()?;
    let sf = &cfg.score_field;
    let seed = cfg.seeds[0];
    let spec = ManifoldSpec::native(cfg.manifold()?)?;
    let data = sample_manifold(&spec, sf.n, derive_seed(seed, TAG_DATA))?;
    let coord = |k: usize, len: usize| {
        if len == 1 {
            0.0
        } else {
            -sf.extent + 2.0 * sf.extent * k as f64 / (len - 1) as f64
        }
    };
    let grid: Vec<[f64; 2]> = (0..sf.grid_h)
        .flat_map(|j| (0..sf.grid_w).map(move |i| [coord(i, sf.grid_w), coord(j, sf.grid_h)]))
        .collect();
    let scores = grid
        .par_iter()
        .map(|x| empirical_score(x, sf.t, &data.points))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(dir)?;
    save_dataset(&data, &dir.join("training.csv"))?;
    let mut w = csv::Writer::from_path(dir.join("score_field.csv")).map_err(Error::from)?;
    w.write_record(["x", "y", "score_x", "score_y"])
        .map_err(Error::from)?;
    for (x, s) in grid.iter().zip(&scores) {
        w.write_record([x[0], x[1], s[0], s[1]].iter().map(|v| format!("{v:?}")))
            .map_err(Error::from)?;
    }
    w.flush()?;
    Ok(grid.len())
}

/// Settings of a one-shot IDM batch generated from a stored data set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleJob {
    pub count: usize,
    pub seed: u64,
    pub c0: f64,
    pub path_mode: idm::sampler::PathMode,
    pub ode_steps: usize,
    /// Overrides the intrinsic dimension recorded in the data sidecar.
    pub intrinsic_dim: Option<usize>,
    pub workers: Option<usize>,
}

impl Default for SampleJob {
    fn default() -> Self {
        Self {
            count: 1000,
            seed: 0,
            c0: 0.8,
            path_mode: idm::sampler::PathMode::ShortCircuit,
            ode_steps: idm::sampler::DEFAULT_ODE_STEPS,
            intrinsic_dim: None,
            workers: None,
        }
    }
}

/// Generates `job.count` IDM samples from the points in `data_csv`. The
/// manifold (for the intrinsic dimension and diameter) comes from the JSON
/// sidecar when present; without one, `intrinsic_dim` is required and the
/// diameter is measured from the data.
pub fn run_sample(job: &SampleJob, data_csv: &Path, out_csv: &Path) -> Result<SampleBatch> {
    if job.count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    let sidecar = idm::io::sidecar_path(data_csv);
    let (points, d, diameter) = if sidecar.exists() {
        let ds = idm::io::load_dataset(data_csv)?;
        let d = job.intrinsic_dim.unwrap_or(ds.spec.intrinsic_dim());
        (ds.points, d, ds.spec.diameter())
    } else {
        let points = idm::io::read_points_csv(data_csv)?;
        let d = job.intrinsic_dim.ok_or_else(|| {
            Error::Config("no sidecar next to the data; pass the intrinsic dimension".into())
        })?;
        let diameter = bounding_diameter(&points);
        (points, d, diameter)
    };
    if points.len() < 2 {
        return Err(Error::Config(
            "the data file needs at least two points".into(),
        ));
    }
    let plan = bandwidth_plan(job.c0, d, points.len())?;
    let sampler = SamplerConfig::new(plan, points.dim(), diameter.max(1e-12))?
        .with_path_mode(job.path_mode)
        .with_ode_steps(job.ode_steps);
    let pool = build_pool(job.workers)?;
    let start = Instant::now();
    let batch = pool.install(|| idm_sample(&points, &sampler, job.count, job.seed))?;
    let wall = start.elapsed().as_millis() as u64;
    if let Some(parent) = out_csv.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_batch(&batch, wall, out_csv)?;
    Ok(batch)
}

/// Diagonal of the axis-aligned bounding box: an upper bound on the diameter.
fn bounding_diameter(points: &PointCloud) -> f64 {
    let dim = points.dim();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for r in points.rows() {
        for k in 0..dim {
            lo[k] = lo[k].min(r[k]);
            hi[k] = hi[k].max(r[k]);
        }
    }
    lo.iter()
        .zip(&hi)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt()
}
