//! CSV persistence for point sets with JSON sidecars.
//!
//! A point file has a header `x0,...,x{D-1}` and one row per point. The
//! sidecar lives next to it with the extension replaced by `.json`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifolds::{DataSet, ManifoldSpec};
use crate::points::PointCloud;
use crate::sampler::{Method, SampleBatch, SamplerConfig};

/// Path of the JSON sidecar that belongs to a CSV file.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Shortest round-trip text for a coordinate.
fn fmt_coord(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_points_csv(path: &Path, points: &PointCloud) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record((0..points.dim()).map(|k| format!("x{k}")))?;
    for row in points.rows() {
        w.write_record(row.iter().map(|v| fmt_coord(*v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points_csv(path: &Path) -> Result<PointCloud> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let header = r.headers()?.clone();
    let dim = header.len();
    for (k, name) in header.iter().enumerate() {
        if name.trim() != format!("x{k}") {
            return Err(Error::Io(format!(
                "{}: expected column x{k}, found {name:?}",
                path.display()
            )));
        }
    }
    let mut points = PointCloud::new(dim);
    let mut row = Vec::with_capacity(dim);
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        row.clear();
        for field in rec.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Io(format!(
                    "{}: row {}: bad number {field:?}",
                    path.display(),
                    line + 1
                ))
            })?;
            row.push(v);
        }
        points.push(&row)?;
    }
    Ok(points)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[derive(Serialize, Deserialize)]
struct DataSetMeta {
    spec: ManifoldSpec,
    seed: u64,
}

/// Writes the points to `csv_path` and `{spec, seed}` to the sidecar.
pub fn save_dataset(data: &DataSet, csv_path: &Path) -> Result<()> {
    write_points_csv(csv_path, &data.points)?;
    write_json(
        &sidecar_path(csv_path),
        &DataSetMeta {
            spec: data.spec.clone(),
            seed: data.data_seed,
        },
    )
}

pub fn load_dataset(csv_path: &Path) -> Result<DataSet> {
    let points = read_points_csv(csv_path)?;
    let meta: DataSetMeta = read_json(&sidecar_path(csv_path))?;
    if points.dim() != meta.spec.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: meta.spec.ambient_dim(),
            got: points.dim(),
        });
    }
    Ok(DataSet {
        points,
        spec: meta.spec,
        data_seed: meta.seed,
    })
}

/// Sidecar contents of a persisted sample batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchMeta {
    pub method: Method,
    pub config: Option<SamplerConfig>,
    pub seed: u64,
    pub wall_time_ms: u64,
}

pub fn save_batch(batch: &SampleBatch, wall_time_ms: u64, csv_path: &Path) -> Result<()> {
    write_points_csv(csv_path, &batch.samples)?;
    let meta = BatchMeta {
        method: batch.method,
        config: batch.config,
        seed: batch.seed,
        wall_time_ms,
    };
    write_json(&sidecar_path(csv_path), &meta)
}

pub fn load_batch(csv_path: &Path) -> Result<(SampleBatch, BatchMeta)> {
    let samples = read_points_csv(csv_path)?;
    let meta: BatchMeta = read_json(&sidecar_path(csv_path))?;
    let batch = SampleBatch {
        samples,
        config: meta.config,
        seed: meta.seed,
        method: meta.method,
    };
    Ok((batch, meta))
}
