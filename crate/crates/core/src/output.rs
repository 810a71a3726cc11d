//! Writers for run artifacts: JSON manifests, norm-series CSV and binary
//! snapshots.

use crate::error::{Error, Result};
use crate::field::Field;
use crate::partition::NormSeries;
use serde::Serialize;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn write_series(path: &Path, series: &NormSeries) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    series.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes `<stem>_<index>.bin` for every snapshot.
pub fn write_snapshots(dir: &Path, stem: &str, fields: &[Field]) -> Result<()> {
    for (i, f) in fields.iter().enumerate() {
        let mut w = BufWriter::new(File::create(dir.join(format!("{stem}_{i:04}.bin")))?);
        f.write_binary(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// Rows of plain numbers under a header line.
pub fn write_rows(path: &Path, header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}
