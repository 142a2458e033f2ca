//! CSV and JSON writers. Column orders are fixed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector6;
use serde::Serialize;

use super::run::{MonteCarlo, Report, TrialResult};
use crate::error::{Error, Result};

#[derive(Debug, Serialize)]
struct TrajectoryRow {
    step: usize,
    trial: usize,
    sensor: usize,
    state_index: usize,
    error: f64,
}

#[derive(Debug, Serialize)]
struct MseRow {
    step: usize,
    mean_mse: f64,
}

#[derive(Debug, Serialize)]
struct PathRow {
    step: usize,
    x: f64,
    y: f64,
    z: f64,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let source = match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => std::io::Error::other(format!("{other:?}")),
    };
    io_err(path, source)
}

/// Writes rows under a header that is present even when there are no rows.
fn write_csv<T: Serialize>(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = T>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// `errors[trial][k - 1][sensor]` as long-format rows, step-major.
pub fn write_trajectory(path: &Path, errors: &[(usize, &[Vec<Vector6<f64>>])]) -> Result<()> {
    let steps = errors.iter().map(|(_, e)| e.len()).max().unwrap_or(0);
    let rows = (0..steps).flat_map(move |k| {
        errors.iter().flat_map(move |(trial, e)| {
            e.get(k).into_iter().flat_map(move |per_sensor| {
                per_sensor.iter().enumerate().flat_map(move |(sensor, v)| {
                    v.iter()
                        .enumerate()
                        .map(move |(state_index, &error)| TrajectoryRow {
                            step: k + 1,
                            trial: *trial,
                            sensor,
                            state_index,
                            error,
                        })
                })
            })
        })
    });
    write_csv(
        path,
        &["step", "trial", "sensor", "state_index", "error"],
        rows,
    )
}

pub fn write_mse(path: &Path, mean_mse: &[f64]) -> Result<()> {
    let rows = mean_mse.iter().enumerate().map(|(k, &m)| MseRow {
        step: k + 1,
        mean_mse: m,
    });
    write_csv(path, &["step", "mean_mse"], rows)
}

pub fn write_target_path(path: &Path, trial: Option<&TrialResult>) -> Result<()> {
    let rows = trial.into_iter().flat_map(|t| {
        t.truth.iter().enumerate().map(|(step, x)| {
            let p = x.position();
            PathRow {
                step,
                x: p[0],
                y: p[1],
                z: p[2],
            }
        })
    });
    write_csv(path, &["step", "x", "y", "z"], rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// The four `simulate` artifacts.
pub fn emit_results(report: &Report, mc: &MonteCarlo, out_dir: &Path) -> Result<()> {
    ensure_dir(out_dir)?;
    let errors: Vec<(usize, &[Vec<Vector6<f64>>])> = mc
        .trials
        .iter()
        .map(|t| (t.trial, t.errors.as_slice()))
        .collect();
    write_trajectory(&out_dir.join("trajectory.csv"), &errors)?;
    write_mse(&out_dir.join("mse.csv"), &mc.mean_mse)?;
    write_json(&out_dir.join("report.json"), report)?;
    write_target_path(&out_dir.join("target_path.csv"), mc.trials.first())
}
