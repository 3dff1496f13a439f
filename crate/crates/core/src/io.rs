//! Output writers: trajectory CSV, JSON lines and run manifests.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coupling::csv_error;
use crate::diagnostics::TrajectoryRecord;
use crate::error::Result;

pub const NORM_COLUMNS: [&str; 4] = ["l2_sq", "h1_sq", "h2_sq", "h3_sq"];

/// Header of the trajectory table: time, the four squared norms, the running
/// `int ||Y||_3^2`, the energy `||Y||_2^2 + int ||Y||_3^2`, then observables.
pub fn trajectory_header(record: &TrajectoryRecord) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(NORM_COLUMNS.iter().map(|s| s.to_string()));
    h.push("cumulative_h3".into());
    h.push("energy_h2".into());
    h.extend(record.observable_names.iter().cloned());
    h
}

/// Streams trajectory rows to CSV across segments. Floats use the shortest
/// representation that parses back to the same value.
pub struct TrajectoryCsv<W: Write> {
    writer: csv::Writer<W>,
    header_written: bool,
}

impl<W: Write> TrajectoryCsv<W> {
    pub fn new(out: W) -> Self {
        Self { writer: csv::Writer::from_writer(out), header_written: false }
    }

    /// Appends the rows of `record` from index `skip` on, writing the header
    /// before the first batch.
    pub fn append(&mut self, record: &TrajectoryRecord, skip: usize) -> Result<()> {
        if !self.header_written {
            self.writer.write_record(trajectory_header(record)).map_err(csv_error)?;
            self.header_written = true;
        }
        for i in skip..record.len() {
            let n = record.sq_norms[i];
            let mut row = Vec::with_capacity(7 + record.observable_names.len());
            row.push(record.times[i]);
            row.extend_from_slice(&n);
            row.push(record.cumulative_h3[i]);
            row.push(n[2] + record.cumulative_h3[i]);
            if let Some(obs) = record.observables.get(i) {
                row.extend_from_slice(obs);
            }
            self.writer.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

pub fn write_trajectory_csv<W: Write>(record: &TrajectoryRecord, out: W) -> Result<()> {
    let mut w = TrajectoryCsv::new(out);
    w.append(record, 0)?;
    w.flush()
}

/// A plain numeric table with a header row.
pub fn write_table<W: Write>(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a trajectory CSV back into its header and rows.
pub fn read_csv_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| crate::error::invalid(format!("bad number {s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// One JSON document per line.
pub fn write_jsonl<T: Serialize, W: Write>(items: impl IntoIterator<Item = T>, mut out: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: String,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<serde_json::Value>,
    /// Command-specific results.
    #[serde(default)]
    pub results: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, config_hash: &[u8; 32], seed: u64, config: String, warnings: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: crate::integrator::hex(config_hash),
            seed,
            config,
            warnings,
            certificate: None,
            results: serde_json::Value::Null,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }
}
