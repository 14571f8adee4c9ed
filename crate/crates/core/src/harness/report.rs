//! Run reports: one machine-readable record per enabled check.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRecord {
    pub name: String,
    /// Short description of what the check certifies.
    pub tag: String,
    /// Fitted constant or measured value.
    pub constant: f64,
    /// Stability ratio or auxiliary metric; 1.0 when not applicable.
    pub stability: f64,
    pub pass: bool,
    pub details: String,
}

impl CheckRecord {
    pub fn new(
        name: &str,
        tag: &str,
        constant: f64,
        stability: f64,
        pass: bool,
        details: String,
    ) -> Self {
        CheckRecord {
            name: name.into(),
            tag: tag.into(),
            constant,
            stability,
            pass,
            details,
        }
    }
}

/// Full report of one scenario run.
#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub scenario: String,
    pub config_digest: String,
    pub checks: Vec<CheckRecord>,
    /// Wall-clock seconds per stage; informational only, never written to
    /// the report files so outputs stay bitwise reproducible.
    pub stage_seconds: Vec<(String, f64)>,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn push(&mut self, record: CheckRecord) {
        self.checks.push(record);
    }

    /// Checks ordered failures-first, stable within each group.
    pub fn ordered_checks(&self) -> Vec<&CheckRecord> {
        let mut out: Vec<&CheckRecord> = self.checks.iter().filter(|c| !c.pass).collect();
        out.extend(self.checks.iter().filter(|c| c.pass));
        out
    }

    /// Restrict to a comma-separated subset of check names; unknown names are
    /// rejected so typos do not silently skip checks.
    pub fn filter_checks(&mut self, selection: &str) -> Result<()> {
        let wanted: Vec<&str> = selection
            .split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .collect();
        for name in &wanted {
            if !self.checks.iter().any(|c| c.name == *name) {
                return Err(Error::Config(format!("unknown check `{name}`")));
            }
        }
        self.checks.retain(|c| wanted.contains(&c.name.as_str()));
        Ok(())
    }
}

/// Write the report as text and CSV. Field ordering is fixed; failing checks
/// come first in both formats.
pub fn emit_report(report: &RunReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("report.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    writeln!(csv, "check_name,tag,constant,stability,pass,details")?;
    for c in report.ordered_checks() {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            c.name,
            c.tag,
            c.constant,
            c.stability,
            c.pass,
            c.details.replace(',', ";")
        )?;
    }
    csv.flush()?;

    let txt_path = out_dir.join("report.txt");
    let mut txt = std::io::BufWriter::new(std::fs::File::create(txt_path)?);
    writeln!(txt, "scenario: {}", report.scenario)?;
    writeln!(txt, "config: {}", report.config_digest)?;
    writeln!(
        txt,
        "result: {}",
        if report.all_pass() { "PASS" } else { "FAIL" }
    )?;
    writeln!(txt)?;
    for c in report.ordered_checks() {
        writeln!(
            txt,
            "[{}] {:<28} {} (constant {:.6e}, stability {:.3}) {}",
            if c.pass { "pass" } else { "FAIL" },
            c.name,
            c.tag,
            c.constant,
            c.stability,
            c.details
        )?;
    }
    txt.flush()?;
    Ok(())
}

/// Parse back the CSV written by [`emit_report`].
pub fn parse_report_csv(path: &Path) -> Result<Vec<CheckRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Snapshot("empty report csv".into()))?;
    if header != "check_name,tag,constant,stability,pass,details" {
        return Err(Error::Snapshot("unexpected report header".into()));
    }
    let mut out = Vec::new();
    for line in lines {
        let parts: Vec<&str> = line.splitn(6, ',').collect();
        if parts.len() != 6 {
            return Err(Error::Snapshot(format!("malformed report row `{line}`")));
        }
        out.push(CheckRecord {
            name: parts[0].into(),
            tag: parts[1].into(),
            constant: parts[2]
                .parse()
                .map_err(|_| Error::Snapshot("bad constant".into()))?,
            stability: parts[3]
                .parse()
                .map_err(|_| Error::Snapshot("bad stability".into()))?,
            pass: parts[4]
                .parse()
                .map_err(|_| Error::Snapshot("bad pass flag".into()))?,
            details: parts[5].into(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> RunReport {
        RunReport {
            scenario: "free_transport".into(),
            config_digest: "abc".into(),
            checks: vec![
                CheckRecord::new("alpha", "value identity", 1.0, 1.0, true, "ok".into()),
                CheckRecord::new("beta", "decay envelope", 0.5, 1.2, false, "out of band".into()),
            ],
            stage_seconds: vec![],
        }
    }

    #[test]
    fn failures_are_listed_first() {
        let report = sample_report();
        let ordered = report.ordered_checks();
        assert_eq!(ordered[0].name, "beta");
        assert!(!report.all_pass());
    }

    #[test]
    fn empty_check_set_writes_header_only() {
        let report = RunReport {
            scenario: "none".into(),
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn csv_round_trip_equals_in_memory_report() {
        let report = sample_report();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report, dir.path()).unwrap();
        let parsed = parse_report_csv(&dir.path().join("report.csv")).unwrap();
        let ordered: Vec<CheckRecord> = report.ordered_checks().into_iter().cloned().collect();
        assert_eq!(parsed, ordered);
    }

    #[test]
    fn filter_rejects_unknown_names() {
        let mut report = sample_report();
        assert!(report.filter_checks("alpha,missing").is_err());
        report.filter_checks("alpha").unwrap();
        assert_eq!(report.checks.len(), 1);
    }
}
