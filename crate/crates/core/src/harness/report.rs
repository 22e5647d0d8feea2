use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExperimentReport;
use crate::dataset::TaskDescriptor;
use crate::error::{HpmError, Result};
use crate::selection::{RankedSource, RankingStrategy};

pub const CSV_HEADER: &str =
    "target_id,strategy,technique,n_sources,shape_mse,hyper_mse,inversion_residual,wall_ms,error";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Plotdata,
}

impl FromStr for ReportFormat {
    type Err = HpmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "plotdata" => Ok(ReportFormat::Plotdata),
            _ => Err(HpmError::InvalidArgument(format!(
                "unknown report format '{s}' (expected csv, json or plotdata)"
            ))),
        }
    }
}

/// 17 significant digits, enough to round-trip any f64.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Write to a sibling temporary file and rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HpmError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| HpmError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HpmError::io(path, e))
}

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.target_id,
                r.strategy,
                r.technique,
                r.n_sources,
                opt(r.shape_mse),
                opt(r.hyper_mse),
                opt(r.inversion_residual),
                num(r.wall_ms),
                csv_field(r.error.as_deref().unwrap_or(""))
            );
        }
        out
    }

    /// One table for `strategy`: rows are source counts, columns techniques,
    /// cells mean shape MSE.
    pub fn plotdata_csv(&self, strategy: RankingStrategy) -> String {
        let techniques: Vec<_> = self.config.techniques.iter().map(|t| t.technique).collect();
        let mut out = String::from("n_sources");
        for t in &techniques {
            let _ = write!(out, ",{t}");
        }
        out.push('\n');
        for n in self.config.counts() {
            let _ = write!(out, "{n}");
            for &t in &techniques {
                let _ = write!(out, ",{}", opt(self.mean_mse(strategy, t, n)));
            }
            out.push('\n');
        }
        out
    }
}

/// Write `report` into `dir` and return the paths written.
pub fn emit_report(
    report: &ExperimentReport,
    format: ReportFormat,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(HpmError::InvalidArgument("report has no rows".into()));
    }
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            let path = dir.join("report.csv");
            write_atomic(&path, report.to_csv().as_bytes())?;
            written.push(path);
        }
        ReportFormat::Json => {
            let path = dir.join("report.json");
            write_atomic(&path, serde_json::to_string_pretty(report)?.as_bytes())?;
            written.push(path);
        }
        ReportFormat::Plotdata => {
            for &s in &report.config.strategies {
                let path = dir.join(format!("plot_{}.csv", s.name().to_ascii_lowercase()));
                write_atomic(&path, report.plotdata_csv(s).as_bytes())?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

/// Ranking as CSV: order, id, every condition, distance.
pub fn rank_table_csv(ranking: &[RankedSource], descriptors: &[TaskDescriptor]) -> Result<String> {
    let mut out = String::from("order,id");
    if let Some(d) = descriptors.first() {
        for name in d.names() {
            let _ = write!(out, ",{name}");
        }
    }
    out.push_str(",distance\n");
    for (i, r) in ranking.iter().enumerate() {
        let d = descriptors
            .iter()
            .find(|d| d.id() == r.id)
            .ok_or(HpmError::UnknownProcess(r.id))?;
        let _ = write!(out, "{},{}", i + 1, r.id);
        for v in d.values() {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{}", num(r.distance));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_keep_full_precision() {
        let v = 0.1 + 0.2;
        assert_eq!(num(v).parse::<f64>().unwrap(), v);
        assert_eq!(num(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a, \"b\""), "\"a, \"\"b\"\"\"");
    }

    #[test]
    fn format_parsing() {
        assert_eq!("CSV".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
