//! Run reports: a JSON summary and a CSV companion listing every check.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use kac_core::verify::Check;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::HarnessError;

#[derive(Debug, Serialize)]
pub struct Report<'a> {
    pub run_id: String,
    pub config_echo: &'a ExperimentConfig,
    pub checks: &'a [Check],
    pub wall_time: f64,
}

/// Whether every non-diagnostic check passed.
pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().filter(|c| !c.diagnostic).all(|c| c.pass)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Write `report.json` and `checks.csv` into `dir`. An empty check list is
/// an error.
pub fn emit_report(
    dir: &Path,
    run_id: &str,
    config: &ExperimentConfig,
    checks: &[Check],
    wall_time: f64,
) -> Result<Vec<PathBuf>, HarnessError> {
    if checks.is_empty() {
        return Err(HarnessError::EmptyReport);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let report = Report { run_id: run_id.to_string(), config_echo: config, checks, wall_time };
    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(&json_path, json + "\n").map_err(io_err(&json_path))?;

    let csv_path = dir.join("checks.csv");
    let mut f = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    let mut text = String::from("name,estimate,stderr,reference,provenance,pass,diagnostic\n");
    for c in checks {
        text.push_str(&format!(
            "\"{}\",{},{},{},{},{},{}\n",
            c.name.replace('"', "'"),
            c.estimate,
            c.stderr,
            c.reference,
            c.provenance.tag(),
            c.pass,
            c.diagnostic
        ));
    }
    f.write_all(text.as_bytes()).map_err(io_err(&csv_path))?;
    Ok(vec![json_path, csv_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Experiment, ExperimentConfig};
    use kac_core::chaos::Provenance;

    #[test]
    fn empty_check_list_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::defaults(Experiment::Gap);
        let err = emit_report(dir.path(), "x", &cfg, &[], 0.0).unwrap_err();
        assert!(matches!(err, HarnessError::EmptyReport));
    }

    #[test]
    fn report_schema() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::defaults(Experiment::Gap);
        let checks = [Check::new("a", 1.0, 0.1, 1.0, Provenance::Derived, true)];
        emit_report(dir.path(), "run", &cfg, &checks, 1.5).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        for key in ["run_id", "config_echo", "checks", "wall_time"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let c = &v["checks"][0];
        for key in ["name", "estimate", "stderr", "reference", "provenance", "pass"] {
            assert!(c.get(key).is_some(), "{key}");
        }
        let csv = fs::read_to_string(dir.path().join("checks.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        fs::write(&file, "x").unwrap();
        let cfg = ExperimentConfig::defaults(Experiment::Gap);
        let checks = [Check::new("a", 1.0, 0.1, 1.0, Provenance::Derived, true)];
        assert!(matches!(emit_report(&file.join("sub"), "r", &cfg, &checks, 0.0), Err(HarnessError::Io { .. })));
    }

    #[test]
    fn diagnostics_do_not_fail_a_run() {
        let checks = [
            Check::new("a", 1.0, 0.1, 1.0, Provenance::Derived, true),
            Check::new("b", 1.0, 0.1, 1.0, Provenance::Derived, false).diagnostic(),
        ];
        assert!(all_pass(&checks));
    }
}
