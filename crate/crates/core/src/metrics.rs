//! Metrics rows, the run manifest and the loss-curve projection.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};

/// Bumped whenever the metrics CSV columns change.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub const METRICS_HEADER: &str = "epoch,iter,split,loss,accuracy,lr,wall_ms";

pub const CURVE_HEADER: &str = "epoch,iter,split,loss";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub iter: u64,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.iter, self.split, self.loss, self.accuracy, self.lr, self.wall_ms
        )
    }

    pub fn parse_csv_row(line: &str, line_no: usize) -> Result<Self> {
        let err = |column: usize, message: String| LabError::Parse {
            line: line_no,
            column,
            message,
        };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(err(1, format!("expected 7 columns, found {}", cols.len())));
        }
        fn num<T: std::str::FromStr>(s: &str) -> Option<T> {
            s.parse().ok()
        }
        Ok(Self {
            epoch: num(cols[0]).ok_or_else(|| err(1, format!("bad epoch `{}`", cols[0])))?,
            iter: num(cols[1]).ok_or_else(|| err(2, format!("bad iter `{}`", cols[1])))?,
            split: cols[2].to_string(),
            loss: num(cols[3]).ok_or_else(|| err(4, format!("bad loss `{}`", cols[3])))?,
            accuracy: num(cols[4]).ok_or_else(|| err(5, format!("bad accuracy `{}`", cols[4])))?,
            lr: num(cols[5]).ok_or_else(|| err(6, format!("bad lr `{}`", cols[5])))?,
            wall_ms: num(cols[6]).ok_or_else(|| err(7, format!("bad wall_ms `{}`", cols[6])))?,
        })
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv_row())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != METRICS_HEADER {
                return Err(LabError::Parse {
                    line: 1,
                    column: 1,
                    message: format!("unexpected header `{line}`"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        rows.push(MetricsRecord::parse_csv_row(&line, i + 1)?);
    }
    Ok(rows)
}

/// Loss curve: the `epoch, iter, split, loss` columns of a metrics file,
/// row for row.
pub fn dump_curve<W: Write>(metrics_path: &Path, mut out: W) -> Result<usize> {
    let rows = read_metrics_csv(metrics_path)?;
    writeln!(out, "{CURVE_HEADER}")?;
    for r in &rows {
        writeln!(out, "{},{},{},{}", r.epoch, r.iter, r.split, r.loss)?;
    }
    Ok(rows.len())
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub start_time_unix: u64,
    pub code_version: String,
    pub metrics_schema_version: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<String>,
    /// Settings changed from the config file, e.g. one ablation entry's `beta`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, canonical_config: &str, seed: u64) -> Self {
        let start_time_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            command: command.to_string(),
            config_hash: sha256_hex(canonical_config.as_bytes()),
            seed,
            start_time_unix,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            metrics_schema_version: METRICS_SCHEMA_VERSION,
            outputs: Vec::new(),
            overrides: BTreeMap::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
