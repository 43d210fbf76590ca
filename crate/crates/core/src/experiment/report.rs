//! CSV and JSON report files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::rtf::Estimator;

pub const CSV_HEADER: &str =
    "estimator,snr_db,reverb_label,seed,delta_isnr_db,ild_error_db,itd_error_us";
pub const CSV_FILE: &str = "report.csv";
pub const JSON_FILE: &str = "report.json";

/// One processed condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub estimator: Estimator,
    pub snr_db: f64,
    pub reverb_label: String,
    pub seed: u64,
    pub metrics: MetricReport,
    pub speech_frames: usize,
    pub fallback_bins: usize,
    pub audio_file: Option<String>,
}

/// Contents of the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_significant(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= digits as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        trim(&format!("{:.*}", (digits as i32 - 1 - exp) as usize, v))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format_significant(x, 6)).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn csv_string(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.estimator,
            format_significant(r.snr_db, 6),
            csv_field(&r.reverb_label),
            r.seed,
            format_significant(r.metrics.delta_isnr_db, 6),
            opt(r.metrics.ild_error_db),
            opt(r.metrics.itd_error_us),
        ));
    }
    out
}

/// Writes `report.csv` and `report.json` into `dir` and returns their paths.
pub fn emit_report(
    rows: &[ReportRow],
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    if rows.is_empty() {
        return Err(Error::Empty("report rows"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let csv = dir.join(CSV_FILE);
    std::fs::write(&csv, csv_string(rows)).map_err(|e| Error::io(csv.display().to_string(), e))?;
    let json = dir.join(JSON_FILE);
    let report = Report {
        config: config.clone(),
        rows: rows.to_vec(),
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&json, text + "\n").map_err(|e| Error::io(json.display().to_string(), e))?;
    Ok((csv, json))
}
