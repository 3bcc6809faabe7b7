//! Report serialization shared by every subcommand.
//!
//! Floats are rounded to 9 significant digits before they are written, and
//! field order follows struct declaration order, so the same report always
//! produces the same bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Everything needed to replay a run. Embedded in every report.
///
/// The worker count is deliberately not serialized: output must not depend
/// on it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub subcommand: String,
    /// Named input paths (`rgb_dir`, `pred_dir`, ...). Ordered lists such as
    /// model directories keep their order under indexed keys.
    pub inputs: BTreeMap<String, Vec<PathBuf>>,
    pub outputs: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<crate::dnesa::ScoreWeights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub align: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<ReportFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_pixel: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_pred: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_check: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net_config: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip)]
    pub workers: usize,
}

/// Rounds to 9 significant decimal digits.
pub fn round_sig9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r = round_sig9(n.as_f64().unwrap());
            if let Some(num) = serde_json::Number::from_f64(r) {
                *n = num;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Pretty JSON with rounded floats and a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Formats a float for CSV cells with the same rounding as JSON output.
pub fn fmt_f64(v: f64) -> String {
    format!("{}", round_sig9(v))
}

/// Reports that can be flattened into CSV rows.
pub trait Tabular {
    fn header(&self) -> Vec<String>;
    fn rows(&self) -> Vec<Vec<String>>;
}

pub fn to_csv_string<T: Tabular>(value: &T) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    let err = |e: csv::Error| Error::Format(format!("csv serialization: {e}"));
    w.write_record(value.header()).map_err(err)?;
    for row in value.rows() {
        w.write_record(row).map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("csv serialization: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_report<T: Serialize + Tabular>(
    report: &T,
    path: &Path,
    format: ReportFormat,
) -> Result<()> {
    let text = match format {
        ReportFormat::Json => to_json_string(report)?,
        ReportFormat::Csv => to_csv_string(report)?,
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
