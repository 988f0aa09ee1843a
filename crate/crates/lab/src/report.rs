//! Run reports and the files written for them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use smallball_core::covernum::LogLogFit;

use crate::config::ExperimentConfig;
use crate::error::LabError;

/// A named numeric table, written as `<name>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub name: String,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_used: usize,
}

impl FitReport {
    pub fn new(name: &str, fit: &LogLogFit) -> Self {
        Self {
            name: name.into(),
            slope: fit.slope,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            n_used: fit.n_used,
        }
    }
}

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    /// `C1` .. `C11`.
    pub id: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: String,
    pub seed: u64,
    pub tables: Vec<Table>,
    pub fits: Vec<FitReport>,
    pub checks: Vec<Check>,
    pub series: Vec<Series>,
    pub notes: Vec<String>,
    /// Not part of the deterministic output files.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

impl RunReport {
    pub fn new(experiment: &str, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            seed,
            tables: Vec::new(),
            fits: Vec::new(),
            checks: Vec::new(),
            series: Vec::new(),
            notes: Vec::new(),
            wall_clock_s: 0.0,
        }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn fit(&self, name: &str) -> Option<&FitReport> {
        self.fits.iter().find(|f| f.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Long-format `series,x,y` CSV of every series in the report.
pub fn plot_csv(report: &RunReport) -> String {
    let mut s = String::from("series,x,y\n");
    for ser in &report.series {
        for (x, y) in &ser.points {
            let _ = writeln!(s, "{},{x},{y}", ser.name);
        }
    }
    s
}

pub fn emit_plot_data(report: &RunReport, path: &Path) -> Result<(), LabError> {
    std::fs::write(path, plot_csv(report))?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    experiment: &'a str,
    seed: u64,
    config: &'a ExperimentConfig,
    tables: Vec<String>,
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'a str,
    seed: u64,
    all_passed: bool,
    checks: &'a [Check],
    fits: &'a [FitReport],
    notes: &'a [String],
}

/// Writes `manifest.json`, one CSV per table, `plot.csv`, `summary.json` and
/// `timing.json` (the only file that changes between identical runs).
pub fn write_outputs(report: &RunReport, config: &ExperimentConfig, dir: &Path) -> Result<(), LabError> {
    std::fs::create_dir_all(dir)?;
    let manifest = Manifest {
        tool: "smallball-lab",
        version: env!("CARGO_PKG_VERSION"),
        experiment: &report.experiment,
        seed: report.seed,
        config,
        tables: report.tables.iter().map(|t| format!("{}.csv", t.name)).collect(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    for t in &report.tables {
        std::fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
    }
    emit_plot_data(report, &dir.join("plot.csv"))?;
    let summary = Summary {
        experiment: &report.experiment,
        seed: report.seed,
        all_passed: report.all_passed(),
        checks: &report.checks,
        fits: &report.fits,
        notes: &report.notes,
    };
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    std::fs::write(
        dir.join("timing.json"),
        serde_json::to_string_pretty(&serde_json::json!({ "wall_clock_s": report.wall_clock_s }))?,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_plot_is_header_only() {
        let r = RunReport::new("entropy", 1);
        assert_eq!(plot_csv(&r), "series,x,y\n");
    }

    #[test]
    fn table_csv() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push(vec![1.0, 0.5]);
        assert_eq!(t.to_csv(), "a,b\n1,0.5\n");
    }
}
