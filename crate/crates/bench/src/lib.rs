//! Experiment harness for the inertial diffusion sampler: convergence-rate
//! and ambient-dimension sweeps against the memorizing baseline, the circle
//! illustration and score-field dumps, with CSV/JSON result files.

pub mod config;
pub mod experiments;
pub mod output;
pub mod stats;

pub use config::{Experiment, ExperimentConfig};
pub use experiments::{
    run_circle_demo, run_dimension_experiment, run_rate_experiment, run_sample, run_score_field,
    run_sweep, ExperimentRecord, SampleJob, SweepOutcome, SweepSummary,
};

/// Process exit codes of the `bench` binary.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG_ERROR: i32 = 2;
    pub const PARTIAL_FAILURE: i32 = 3;
    pub const RUN_FAILURE: i32 = 4;
}

/// Exit code of a finished sweep: partial failure when some cells failed,
/// run failure above the tolerated fraction.
pub fn sweep_exit_code(outcome: &SweepOutcome) -> i32 {
    let f = outcome.failed_fraction();
    if f > experiments::MAX_FAILED_FRACTION {
        exit::RUN_FAILURE
    } else if f > 0.0 {
        exit::PARTIAL_FAILURE
    } else {
        exit::SUCCESS
    }
}
