//! Atomic writers for the files every command produces.

use std::path::Path;

use serde::Serialize;

use previewflow::io::write_atomic;

use crate::error::CliResult;

/// Environment switch for single-threaded, byte-reproducible runs.
pub const DETERMINISTIC_ENV: &str = "PREVIEWFLOW_DETERMINISTIC";

pub fn deterministic() -> bool {
    std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1")
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Serializes `rows` with a header taken from the row type.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    write_atomic(path, &csv_bytes(rows)?)?;
    Ok(())
}

pub fn write_csv_raw(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, bytes)?;
    Ok(())
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| crate::error::CliError::io(e.to_string()))
}

/// Mean and sample standard deviation, ignoring NaN entries.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (usize, f64, f64) {
    let v: Vec<f64> = values.into_iter().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (0, f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (v.len(), mean, std)
}
