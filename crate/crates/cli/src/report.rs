//! Run reports and the files written for them.
//!
//! `report.csv` has one row per check with the stable columns
//! `criterion,check,passed,measured,target,tolerance,se,detail`.
//! `report.json` mirrors the whole [`RunReport`] including data tables.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;

/// One measured quantity compared with its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub target: f64,
    /// Allowed deviation, in the unit named by `detail`.
    pub tolerance: f64,
    pub se: Option<f64>,
    pub detail: String,
}

impl Check {
    /// `|measured − target| < n_se · se`.
    pub fn within_se(name: &str, measured: f64, target: f64, se: f64, n_se: f64) -> Self {
        let dev = (measured - target).abs();
        Self {
            name: name.into(),
            passed: dev < n_se * se || dev <= 1e-14 * target.abs(),
            measured,
            target,
            tolerance: n_se,
            se: Some(se),
            detail: "standard errors".into(),
        }
    }

    /// `|measured / target − 1| ≤ rel`.
    pub fn relative(name: &str, measured: f64, target: f64, rel: f64) -> Self {
        Self {
            name: name.into(),
            passed: ((measured - target) / target).abs() <= rel,
            measured,
            target,
            tolerance: rel,
            se: None,
            detail: "relative".into(),
        }
    }

    /// `measured < bound`.
    pub fn below(name: &str, measured: f64, bound: f64, detail: &str) -> Self {
        Self {
            name: name.into(),
            passed: measured < bound,
            measured,
            target: 0.0,
            tolerance: bound,
            se: None,
            detail: detail.into(),
        }
    }
}

/// All checks belonging to one acceptance criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub criterion: u8,
    pub title: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl CriterionResult {
    pub fn new(criterion: u8, title: &str, checks: Vec<Check>) -> Self {
        Self {
            criterion,
            title: title.into(),
            passed: !checks.is_empty() && checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

/// Plot-ready data written next to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: &str, header: &[&str]) -> Self {
        Self {
            file: file.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Formats a float so that it parses back to the same bits.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub name: String,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub criteria: Vec<CriterionResult>,
    pub tables: Vec<Table>,
    /// Seconds; the only field allowed to differ between identical runs.
    pub wall_time: f64,
    /// Hash of everything above except the wall time.
    pub report_hash: String,
}

impl RunReport {
    pub fn new(
        name: String,
        kind: &str,
        config_hash: String,
        seed: u64,
        criteria: Vec<CriterionResult>,
        tables: Vec<Table>,
        wall_time: f64,
    ) -> Self {
        let mut r = Self {
            schema_version: crate::config::SCHEMA_VERSION,
            name,
            kind: kind.into(),
            config_hash,
            seed,
            criteria,
            tables,
            wall_time,
            report_hash: String::new(),
        };
        r.report_hash = r.content_hash();
        r
    }

    pub fn content_hash(&self) -> String {
        let content = serde_json::json!({
            "schema_version": self.schema_version,
            "name": self.name,
            "kind": self.kind,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "criteria": self.criteria,
            "tables": self.tables,
        });
        hex(&Sha256::digest(content.to_string().as_bytes()))
    }

    pub fn all_passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn criterion(&self, id: u8) -> Option<&CriterionResult> {
        self.criteria.iter().find(|c| c.criterion == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const REPORT_COLUMNS: [&str; 8] = ["criterion", "check", "passed", "measured", "target", "tolerance", "se", "detail"];

fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}

/// Writes the report in one format. CSV also writes every data table.
pub fn emit_report(report: &RunReport, format: ReportFormat, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Json => {
            let path = dir.join("report.json");
            fs::write(&path, serde_json::to_vec_pretty(report)?)?;
            written.push(path);
        }
        ReportFormat::Csv => {
            let rows: Vec<Vec<String>> = report
                .criteria
                .iter()
                .flat_map(|c| {
                    c.checks.iter().map(move |k| {
                        vec![
                            c.criterion.to_string(),
                            k.name.clone(),
                            k.passed.to_string(),
                            num(k.measured),
                            num(k.target),
                            num(k.tolerance),
                            k.se.map(num).unwrap_or_default(),
                            k.detail.clone(),
                        ]
                    })
                })
                .collect();
            let header: Vec<String> = REPORT_COLUMNS.iter().map(|s| s.to_string()).collect();
            let path = dir.join("report.csv");
            write_table(&path, &header, &rows)?;
            written.push(path);
            for t in &report.tables {
                let path = dir.join(&t.file);
                write_table(&path, &t.header, &t.rows)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunReport {
        let checks = vec![
            Check::within_se("mean", 0.301, 0.3, 0.0046, 3.0),
            Check::relative("ratio", 4.1, 4.0, 0.1),
        ];
        let mut t = Table::new("data.csv", &["r", "omega"]);
        t.push(vec![num(0.1), num(-1.0 / 3.0)]);
        RunReport::new(
            "x".into(),
            "born_rule",
            "abc".into(),
            1,
            vec![CriterionResult::new(2, "Born rule", checks)],
            vec![t],
            0.5,
        )
    }

    #[test]
    fn json_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample();
        emit_report(&r, ReportFormat::Json, dir.path()).unwrap();
        let back: RunReport = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.content_hash(), r.report_hash);
    }

    #[test]
    fn empty_report_gives_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        let r = RunReport::new("x".into(), "born_rule", "abc".into(), 1, vec![], vec![], 0.0);
        emit_report(&r, ReportFormat::Csv, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(text, REPORT_COLUMNS.join(",") + "\n");
    }

    #[test]
    fn wall_time_does_not_enter_the_hash() {
        let a = sample();
        let mut b = sample();
        b.wall_time = 99.0;
        assert_eq!(a.content_hash(), b.content_hash());
        b.criteria[0].checks[0].measured = 0.302;
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn floats_survive_text() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02e23] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn within_se_check() {
        assert!(Check::within_se("a", 1.0, 1.0, 0.0, 3.0).passed);
        assert!(!Check::within_se("a", 1.1, 1.0, 0.01, 3.0).passed);
    }
}
