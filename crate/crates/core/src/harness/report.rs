//! CSV and JSON output of experiment reports.

use std::path::{Path, PathBuf};

use super::experiment::{ExperimentReport, ReportRow};
use crate::error::{PrecodingError, Result};

pub const CSV_HEADER: [&str; 9] = [
    "sweep_param",
    "sweep_value",
    "algorithm",
    "fhat_nats",
    "mc_rate_nats",
    "mc_ci99_nats",
    "iters",
    "iter_time_ms",
    "seed",
];

fn opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_record(row: &ReportRow) -> [String; 9] {
    [
        row.sweep_param.clone(),
        row.sweep_value.to_string(),
        row.algorithm.name().to_string(),
        opt(row.fhat_nats),
        opt(row.mc_rate_nats),
        opt(row.mc_ci99_nats),
        opt(row.iters),
        opt(row.iter_time_ms),
        row.seed.to_string(),
    ]
}

fn csv_error(path: &Path, e: csv::Error) -> PrecodingError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => PrecodingError::io(path, io),
        other => PrecodingError::Serialization(format!("{}: {other:?}", path.display())),
    }
}

/// Writes one CSV line per row. Failed rows keep their numeric fields empty.
pub fn write_csv(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for row in &report.rows {
        w.write_record(csv_record(row)).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| PrecodingError::io(path, e))
}

pub fn write_json(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(report).map_err(|e| PrecodingError::Serialization(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| PrecodingError::io(path, e))
}

pub fn load_json(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| PrecodingError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PrecodingError::Serialization(format!("{}: {e}", path.display())))
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`, creating it if needed.
pub fn emit_report(report: &ExperimentReport, dir: impl AsRef<Path>, stem: &str) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| PrecodingError::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_csv(report, &csv_path)?;
    write_json(report, &json_path)?;
    Ok((csv_path, json_path))
}
