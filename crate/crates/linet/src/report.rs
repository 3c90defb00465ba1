//! Machine-readable run reports.
//!
//! One self-describing record per experiment, appendable as JSON lines or
//! CSV (header written once). Field names are stable; the config echo is a
//! sorted key/value map, embedded as a JSON object in both formats.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output format for reports and histories.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    JsonLines,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json-lines" => Ok(ReportFormat::JsonLines),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::config(format!(
                "unknown report format {other:?} (expected jsonl or csv)"
            ))),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::JsonLines => "jsonl",
            ReportFormat::Csv => "csv",
        }
    }
}

/// Result record of one experiment run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunReport {
    pub dataset: String,
    pub variant: String,
    pub horizon: usize,
    pub lookback: usize,
    pub seed: u64,
    /// Test-split metrics on the normalized scale.
    pub mae: f64,
    pub mse: f64,
    pub train_seconds: f64,
    pub test_seconds: f64,
    pub param_count: usize,
    pub model_bytes: usize,
    /// Published reference metrics for this dataset/horizon, when known.
    pub reference_mae: Option<f64>,
    pub reference_mse: Option<f64>,
    /// Echo of every configuration key the run used.
    pub config: BTreeMap<String, String>,
}

impl RunReport {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mae", self.mae),
            ("mse", self.mse),
            ("train_seconds", self.train_seconds),
            ("test_seconds", self.test_seconds),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::numerical(format!(
                    "report field {name} is {v}, expected finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

const CSV_HEADER: [&str; 14] = [
    "dataset",
    "variant",
    "horizon",
    "lookback",
    "seed",
    "mae",
    "mse",
    "train_seconds",
    "test_seconds",
    "param_count",
    "model_bytes",
    "reference_mae",
    "reference_mse",
    "config",
];

/// Appends one report record; creates the file (and CSV header) on demand.
pub fn emit_report(report: &RunReport, path: &Path, format: ReportFormat) -> Result<()> {
    report.validate()?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::io(format!("cannot create {}: {e}", dir.display())))?;
        }
    }
    let fresh = !path.exists();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(format!("cannot open {}: {e}", path.display())))?;
    match format {
        ReportFormat::JsonLines => {
            let line = serde_json::to_string(report)
                .map_err(|e| Error::io(format!("cannot encode report: {e}")))?;
            writeln!(file, "{line}").map_err(|e| Error::io(e.to_string()))?;
        }
        ReportFormat::Csv => {
            let mut writer = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(file);
            if fresh {
                writer
                    .write_record(CSV_HEADER)
                    .map_err(|e| Error::io(e.to_string()))?;
            }
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let config_json = serde_json::to_string(&report.config)
                .map_err(|e| Error::io(format!("cannot encode config echo: {e}")))?;
            writer
                .write_record([
                    report.dataset.clone(),
                    report.variant.clone(),
                    report.horizon.to_string(),
                    report.lookback.to_string(),
                    report.seed.to_string(),
                    report.mae.to_string(),
                    report.mse.to_string(),
                    report.train_seconds.to_string(),
                    report.test_seconds.to_string(),
                    report.param_count.to_string(),
                    report.model_bytes.to_string(),
                    opt(report.reference_mae),
                    opt(report.reference_mse),
                    config_json,
                ])
                .map_err(|e| Error::io(e.to_string()))?;
            writer.flush().map_err(|e| Error::io(e.to_string()))?;
        }
    }
    Ok(())
}

/// Writes the per-epoch training history, one record per epoch.
pub fn emit_history(
    history: &[crate::train::EpochRecord],
    path: &Path,
    format: ReportFormat,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::io(format!("cannot create {}: {e}", dir.display())))?;
        }
    }
    match format {
        ReportFormat::JsonLines => {
            let mut out = String::new();
            for record in history {
                out.push_str(
                    &serde_json::to_string(record)
                        .map_err(|e| Error::io(format!("cannot encode epoch record: {e}")))?,
                );
                out.push('\n');
            }
            std::fs::write(path, out)
                .map_err(|e| Error::io(format!("cannot write {}: {e}", path.display())))?;
        }
        ReportFormat::Csv => {
            let mut writer = csv::Writer::from_path(path)
                .map_err(|e| Error::io(format!("cannot write {}: {e}", path.display())))?;
            writer
                .write_record(["epoch", "train_mse", "val_mse", "seconds", "improved"])
                .map_err(|e| Error::io(e.to_string()))?;
            for r in history {
                writer
                    .write_record([
                        r.epoch.to_string(),
                        r.train_mse.to_string(),
                        r.val_mse.to_string(),
                        r.seconds.to_string(),
                        r.improved.to_string(),
                    ])
                    .map_err(|e| Error::io(e.to_string()))?;
            }
            writer.flush().map_err(|e| Error::io(e.to_string()))?;
        }
    }
    Ok(())
}

/// Reads every report back from a JSON-lines file.
pub fn read_jsonl(path: &Path) -> Result<Vec<RunReport>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::data(format!("bad report line: {e}"))))
        .collect()
}

/// Reads every report back from a CSV file written by [`emit_report`].
pub fn read_csv(path: &Path) -> Result<Vec<RunReport>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::io(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let r = record.map_err(|e| Error::data(e.to_string()))?;
        let get = |i: usize| r.get(i).unwrap_or("").to_string();
        let num = |i: usize| -> Result<f64> {
            get(i)
                .parse()
                .map_err(|e| Error::data(format!("bad number in report csv: {e}")))
        };
        let opt_num = |i: usize| -> Result<Option<f64>> {
            let s = get(i);
            if s.is_empty() {
                Ok(None)
            } else {
                Ok(Some(s.parse().map_err(|e| {
                    Error::data(format!("bad number in report csv: {e}"))
                })?))
            }
        };
        out.push(RunReport {
            dataset: get(0),
            variant: get(1),
            horizon: num(2)? as usize,
            lookback: num(3)? as usize,
            seed: num(4)? as u64,
            mae: num(5)?,
            mse: num(6)?,
            train_seconds: num(7)?,
            test_seconds: num(8)?,
            param_count: num(9)? as usize,
            model_bytes: num(10)? as usize,
            reference_mae: opt_num(11)?,
            reference_mse: opt_num(12)?,
            config: serde_json::from_str(&get(13))
                .map_err(|e| Error::data(format!("bad config echo: {e}")))?,
        });
    }
    Ok(out)
}

/// Published full-model reference metrics, keyed by dataset tag and horizon.
const REFERENCE_METRICS: &[(&str, usize, f64, f64)] = &[
    // (tag, horizon, mae, mse)
    ("etth2", 96, 0.282, 0.1641),
    ("etth2", 192, 0.3092, 0.1945),
    ("etth2", 336, 0.3233, 0.2028),
    ("etth2", 720, 0.3553, 0.2408),
    ("ettm2", 96, 0.2284, 0.1131),
    ("ettm2", 192, 0.2612, 0.1436),
    ("ettm2", 336, 0.2891, 0.1723),
    ("ettm2", 720, 0.3231, 0.2149),
    ("electricity", 96, 0.275, 0.1757),
    ("electricity", 192, 0.2867, 0.1882),
    ("electricity", 336, 0.3029, 0.2022),
    ("electricity", 720, 0.3369, 0.2434),
    ("weather", 96, 0.2407, 0.1757),
    ("weather", 192, 0.2865, 0.22),
    ("weather", 336, 0.3142, 0.2676),
    ("weather", 720, 0.3676, 0.3389),
    ("traffic", 96, 0.3171, 0.3482),
    ("traffic", 192, 0.3317, 0.3676),
    ("traffic", 336, 0.3333, 0.3745),
    ("traffic", 720, 0.3462, 0.3942),
];

/// Looks up published reference (MAE, MSE) for a dataset name and horizon.
///
/// The dataset tag is matched as a substring of the lowercased file stem,
/// so `data/ETTm2.csv` and `ettm2_demo.csv` both resolve to `ettm2`.
pub fn reference_metrics(dataset: &str, horizon: usize) -> Option<(f64, f64)> {
    let lower = dataset.to_ascii_lowercase();
    REFERENCE_METRICS
        .iter()
        .find(|(tag, h, _, _)| *h == horizon && lower.contains(tag))
        .map(|&(_, _, mae, mse)| (mae, mse))
}
