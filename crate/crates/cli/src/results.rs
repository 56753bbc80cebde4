//! Result rows and loss traces as CSV.

use std::path::Path;

use covlab_core::io::{read_file, write_file, Provenance};
use covlab_core::metrics::MetricReport;
use covlab_core::protocol::TraceRow;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset_id: String,
    pub model_id: String,
    pub variant: String,
    pub wql: f64,
    /// NaN when no series has a defined MASE.
    pub mase: f64,
    pub n_series_scored: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl ResultRow {
    pub fn from_report(report: &MetricReport, config_hash: &str) -> Self {
        Self {
            dataset_id: report.dataset_id.clone(),
            model_id: report.model_id.clone(),
            variant: report.variant.clone(),
            wql: report.wql,
            mase: report.mase,
            n_series_scored: report.n_series_scored,
            seed: report.seed,
            config_hash: config_hash.to_string(),
        }
    }

    fn key(&self) -> (&str, &str, u64) {
        (&self.dataset_id, &self.model_id, self.seed)
    }
}

pub fn encode_csv<T: Serialize>(rows: &[T], path: &Path) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::data(path, e))?;
    }
    w.into_inner().map_err(|e| CliError::data(path, e))
}

/// Header-only files still need their header, which `csv` only writes with
/// the first record.
fn encode_with_header<T: Serialize>(header: &[&str], rows: &[T], path: &Path) -> CliResult<Vec<u8>> {
    if rows.is_empty() {
        return Ok(format!("{}\n", header.join(",")).into_bytes());
    }
    encode_csv(rows, path)
}

pub fn decode_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let bytes = read_file(path)?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::data(path, e))
}

const RESULT_HEADER: [&str; 8] = [
    "dataset_id",
    "model_id",
    "variant",
    "wql",
    "mase",
    "n_series_scored",
    "seed",
    "config_hash",
];

/// Rows of a results file; a missing file has none.
pub fn read_results(path: &Path) -> CliResult<Vec<ResultRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    decode_csv(path)
}

/// Replaces rows sharing (dataset, model, seed) with `new` and rewrites the
/// file sorted by that key.
pub fn upsert_results(path: &Path, new: &[ResultRow]) -> CliResult<Vec<ResultRow>> {
    let mut rows = read_results(path)?;
    for n in new {
        match rows.iter_mut().find(|r| r.key() == n.key()) {
            Some(r) => *r = n.clone(),
            None => rows.push(n.clone()),
        }
    }
    rows.sort_by(|a, b| a.key().cmp(&b.key()));
    write_file(path, &encode_with_header(&RESULT_HEADER, &rows, path)?)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub train_loss: Option<f64>,
    pub val_wql: Option<f64>,
    pub config_hash: String,
    pub seed: u64,
}

pub fn write_trace(path: &Path, trace: &[TraceRow], provenance: &Provenance) -> CliResult<()> {
    let rows: Vec<TraceRecord> = trace
        .iter()
        .map(|t| TraceRecord {
            step: t.step,
            train_loss: t.train_loss,
            val_wql: t.val_wql,
            config_hash: provenance.config_hash.clone(),
            seed: provenance.seed,
        })
        .collect();
    let header = ["step", "train_loss", "val_wql", "config_hash", "seed"];
    write_file(path, &encode_with_header(&header, &rows, path)?)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> CliResult<Vec<TraceRecord>> {
    decode_csv(path)
}
