//! Experiment configuration: presets, JSON overlays and validation.

use std::path::PathBuf;

use idm::metrics::SinkhornConfig;
use idm::sampler::PathMode;
use idm::{Error, ManifoldKind, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Rate,
    Dimension,
    CircleDemo,
    ScoreField,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Rate => "rate",
            Experiment::Dimension => "dimension",
            Experiment::CircleDemo => "circle_demo",
            Experiment::ScoreField => "score_field",
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Settings of the circle illustration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircleDemoConfig {
    /// Training points drawn uniformly from the circle.
    pub n: usize,
    /// Early-stopped samples drawn from the smoothed empirical measure.
    pub count: usize,
    /// Early-stopping time, also used as h^2 for the inertia step.
    pub t: f64,
}

impl Default for CircleDemoConfig {
    fn default() -> Self {
        Self {
            n: 70,
            count: 200,
            t: 0.05,
        }
    }
}

/// Settings of the score-field dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreFieldConfig {
    pub n: usize,
    pub t: f64,
    pub grid_w: usize,
    pub grid_h: usize,
    /// The grid covers `[-extent, extent]^2`.
    pub extent: f64,
}

impl Default for ScoreFieldConfig {
    fn default() -> Self {
        Self {
            n: 70,
            t: 0.05,
            grid_w: 41,
            grid_h: 41,
            extent: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Manifold tag: `circle`, `sphere` or `special_orthogonal`.
    pub kind: String,
    pub m_or_d: usize,
    /// Ambient dimensions D; the rate experiment uses exactly one.
    pub d_list: Vec<usize>,
    /// Training-set sizes n; the dimension experiment uses exactly one.
    pub n_list: Vec<usize>,
    pub c0: f64,
    /// Proxy sample count M (ground-truth draws and samples per method).
    pub m_proxy: usize,
    pub seeds: Vec<u64>,
    pub sinkhorn: SinkhornConfig,
    pub path_mode: PathMode,
    pub output_dir: PathBuf,
    /// Size of the worker pool; `None` uses every available core.
    pub workers: Option<usize>,
    /// When false, `wall_time_ms` is written as 0 so that result files are
    /// byte-reproducible.
    pub record_wall_time: bool,
    pub circle_demo: CircleDemoConfig,
    pub score_field: ScoreFieldConfig,
}

/// Sinkhorn settings for experiment runs: annealing with one update per
/// level and a short final budget, reporting rather than failing when the
/// final marginal tolerance is not met.
pub fn experiment_sinkhorn() -> SinkhornConfig {
    SinkhornConfig {
        level_iters: 1,
        max_iters: 120,
        strict: false,
        ..SinkhornConfig::default()
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults for each experiment.
    pub fn preset(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            kind: "special_orthogonal".into(),
            m_or_d: 4,
            d_list: vec![50],
            n_list: (8..=12).map(|k| 1usize << k).collect(),
            c0: 0.8,
            m_proxy: 20_000,
            seeds: vec![0, 1, 2],
            sinkhorn: experiment_sinkhorn(),
            path_mode: PathMode::ShortCircuit,
            output_dir: PathBuf::from(format!("out/{experiment}")),
            workers: None,
            record_wall_time: true,
            circle_demo: CircleDemoConfig::default(),
            score_field: ScoreFieldConfig::default(),
        };
        match experiment {
            Experiment::Rate => base,
            Experiment::Dimension => Self {
                n_list: vec![2048],
                d_list: vec![16, 32, 64, 128, 256],
                ..base
            },
            Experiment::CircleDemo | Experiment::ScoreField => Self {
                kind: "circle".into(),
                m_or_d: 1,
                d_list: vec![2],
                n_list: vec![70],
                seeds: vec![0],
                ..base
            },
        }
    }

    /// The preset for `experiment` with the fields of `overlay` (a partial
    /// JSON object) written over it. Nested objects merge key by key.
    pub fn from_overlay(experiment: Experiment, overlay: &serde_json::Value) -> Result<Self> {
        let mut value = serde_json::to_value(Self::preset(experiment))
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut value, overlay);
        let cfg: Self = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if cfg.experiment != experiment {
            return Err(Error::Config(format!(
                "config is for the `{}` experiment, not `{experiment}`",
                cfg.experiment
            )));
        }
        Ok(cfg)
    }

    pub fn manifold(&self) -> Result<ManifoldKind> {
        ManifoldKind::from_tag(&self.kind, self.m_or_d)
    }

    /// Checks shared by every experiment: seeds, grid values, C0, workers
    /// and the Sinkhorn settings.
    pub fn validate_grid(&self) -> Result<()> {
        let kind = self.manifold()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.n_list.is_empty() || self.d_list.is_empty() {
            return bad("n-list and D-list must not be empty".into());
        }
        if let Some(n) = self.n_list.iter().find(|&&n| n < 2) {
            return bad(format!("every n must be at least 2, got {n}"));
        }
        if let Some(d) = self.d_list.iter().find(|&&d| d < kind.native_dim()) {
            return bad(format!(
                "D = {d} is smaller than the native dimension {}",
                kind.native_dim()
            ));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return bad(format!("C0 must be positive, got {}", self.c0));
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        self.sinkhorn.validate()
    }

    /// Full validation, including the grid shape each experiment needs.
    pub fn validate(&self) -> Result<()> {
        self.validate_grid()?;
        let kind = self.manifold()?;
        let bad = |msg: String| Err(Error::Config(msg));
        match self.experiment {
            Experiment::Rate => {
                let mut distinct = self.n_list.clone();
                distinct.sort_unstable();
                distinct.dedup();
                if distinct.len() < 3 {
                    return bad(format!(
                        "a slope fit needs at least 3 distinct n values, got {}",
                        distinct.len()
                    ));
                }
                if self.d_list.len() != 1 {
                    return bad("the rate experiment uses a single D".into());
                }
                self.check_proxy()
            }
            Experiment::Dimension => {
                if self.n_list.len() != 1 {
                    return bad("the dimension experiment uses a single n".into());
                }
                self.check_proxy()
            }
            Experiment::CircleDemo => {
                let demo = &self.circle_demo;
                if kind != ManifoldKind::Circle {
                    return bad("the circle demo needs the circle manifold".into());
                }
                if demo.n < 1 || demo.count < 1 || !(demo.t > 0.0) {
                    return bad("circle demo needs n >= 1, count >= 1 and t > 0".into());
                }
                Ok(())
            }
            Experiment::ScoreField => {
                let sf = &self.score_field;
                if kind != ManifoldKind::Circle || self.d_list != [2] {
                    return Err(Error::Unsupported(
                        "the score field is available for the circle in D = 2 only".into(),
                    ));
                }
                if sf.n < 1 || sf.grid_w < 1 || sf.grid_h < 1 || !(sf.t > 0.0) || !(sf.extent > 0.0)
                {
                    return bad(
                        "score field needs n, grid sizes >= 1 and positive t and extent".into(),
                    );
                }
                Ok(())
            }
        }
    }

    /// The W1 proxy needs at least 100 reference draws.
    pub fn check_proxy(&self) -> Result<()> {
        if self.m_proxy < 100 {
            return Err(Error::Config(format!(
                "M must be at least 100, got {}",
                self.m_proxy
            )));
        }
        Ok(())
    }
}

fn merge(base: &mut serde_json::Value, overlay: &serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}
