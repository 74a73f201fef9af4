//! Result files: `results.csv`, `summary.json` and the resolved config.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use idm::{Error, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiments::{ExperimentRecord, SweepOutcome};

pub const RESULTS_HEADER: &str = "experiment,method,n,D,seed,w1_estimate,sigma_prime,wall_time_ms";

/// One CSV line (without newline). Reals use the shortest text that
/// round-trips, so identical results give identical bytes.
pub fn format_record(r: &ExperimentRecord) -> String {
    format!(
        "{},{},{},{},{},{:?},{:?},{}",
        r.experiment,
        r.method,
        r.n,
        r.ambient_dim,
        r.seed,
        r.w1_estimate,
        r.sigma_prime,
        r.wall_time_ms
    )
}

pub fn write_results_csv(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{RESULTS_HEADER}")?;
    for r in records {
        writeln!(w, "{}", format_record(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    experiment: crate::config::Experiment,
    #[serde(flatten)]
    summary: &'a crate::experiments::SweepSummary,
}

/// Writes `results.csv`, `summary.json` and `config.json` into `dir`.
pub fn write_sweep(dir: &Path, cfg: &ExperimentConfig, outcome: &SweepOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_results_csv(&dir.join("results.csv"), &outcome.records)?;
    write_json(
        &dir.join("summary.json"),
        &SummaryFile {
            experiment: cfg.experiment,
            summary: &outcome.summary,
        },
    )?;
    write_json(&dir.join("config.json"), cfg)
}
