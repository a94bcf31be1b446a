//! Report rows and their CSV/JSON encodings.
//!
//! `report.csv` has one row per model with the columns
//! `method,status,retain_acc,forget_acc,time_s,rtr,bsc,mbg,mbs,leak_match,suspected`.
//! Accuracies, BSC, MBG, MBS and RTR are percentages. Floats use the
//! shortest representation that parses back to the same value; empty cells
//! mean "not available" (failed rows, or timing under parallel execution).
//! `report.json` holds the same rows with the full evaluation, the config
//! snapshot and run metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::EvalResult;
use crate::unlearning::UnlearnConfig;

pub const CSV_FILE: &str = "report.csv";
pub const JSON_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub status: RowStatus,
    pub error: Option<String>,
    /// Resolved config (auto β and b_min filled in); absent for the original.
    pub config: Option<UnlearnConfig>,
    pub result: Option<EvalResult>,
}

impl ReportRow {
    pub(crate) fn ok(method: &str, config: Option<UnlearnConfig>, result: EvalResult) -> Self {
        Self {
            method: method.to_string(),
            status: RowStatus::Ok,
            error: None,
            config,
            result: Some(result),
        }
    }

    pub(crate) fn failed(method: &str, config: UnlearnConfig, error: String) -> Self {
        Self {
            method: method.to_string(),
            status: RowStatus::Failed,
            error: Some(error),
            config: Some(config),
            result: None,
        }
    }

    pub fn csv_row(&self) -> CsvRow {
        let r = self.result.as_ref();
        CsvRow {
            method: self.method.clone(),
            status: self.status,
            retain_acc: r.map(|r| r.retain_acc),
            forget_acc: r.map(|r| r.forget_acc),
            time_s: r.and_then(|r| r.elapsed_seconds),
            rtr: r.and_then(|r| r.rtr),
            bsc: r.map(|r| r.bias.bsc),
            mbg: r.map(|r| r.bias.mbg),
            mbs: r.map(|r| r.bias.mbs),
            leak_match: r.map(|r| r.bias.leakage_exact_match),
            suspected: r.map(|r| r.bias_dominated_suspected),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub method: String,
    pub status: RowStatus,
    pub retain_acc: Option<f64>,
    pub forget_acc: Option<f64>,
    pub time_s: Option<f64>,
    pub rtr: Option<f64>,
    pub bsc: Option<f64>,
    pub mbg: Option<f64>,
    pub mbs: Option<f64>,
    pub leak_match: Option<bool>,
    pub suspected: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub total_seconds: f64,
    pub execution: String,
    /// Wall-clock seconds of the retrain reference run.
    pub t_retrain: f64,
    pub config: ExperimentConfig,
    /// `original`, `retrain`, then one row per configured method.
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row.csv_row()).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::io(CSV_FILE, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report values are always serialisable")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(CSV_FILE);
        let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv(file)?;
        let json_path = dir.join(JSON_FILE);
        std::fs::write(&json_path, self.to_json()).map_err(|e| Error::io(&json_path, e))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

/// Parses a `report.csv` back into rows.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}
