use std::path::Path;

use anyhow::{Context, Result};
use etad_core::MetricsRow;
use serde::Serialize;

/// Writes `rows` as a headed CSV to `path` and returns the text.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    finish(path, w)
}

/// Per-epoch metrics as CSV; an empty run yields an empty file.
pub fn metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(first) = rows.first() {
        w.write_record(first.header())?;
    }
    for row in rows {
        w.write_record(row.values())?;
    }
    finish(path, w)
}

fn finish(path: &Path, w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().context("flushing CSV buffer")?;
    std::fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(String::from_utf8(bytes)?)
}

/// Drops the last column of every line; `wall_seconds` is always last in
/// metrics CSVs.
pub fn strip_wall_seconds(csv_text: &str) -> String {
    csv_text
        .lines()
        .map(|line| line.rsplit_once(',').map_or(line, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}
