//! Parameter sweeps: a base config, axes of values, and a list of seeds.
//!
//! Each run lands in `<output_dir>/runs/<fingerprint>/`. A run whose report
//! already exists is read back instead of retrained, so an interrupted sweep
//! picks up where it stopped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::FLConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::runner::{load_report, run_and_write, REPORT_FILE};

pub const SUMMARY_FILE: &str = "summary.csv";

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub base: FLConfig,
    /// Config key (dotted for nested keys) to the values it takes.
    #[serde(default)]
    pub sweep: BTreeMap<String, Vec<toml::Value>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

/// One point of the sweep grid, before seeds are applied.
#[derive(Clone, Debug)]
pub struct Cell {
    pub assignments: Vec<(String, toml::Value)>,
    pub config: FLConfig,
}

impl Cell {
    /// Fingerprint of the cell with the seed zeroed, shared by all its runs.
    pub fn fingerprint(&self) -> String {
        FLConfig {
            seed: 0,
            ..self.config.clone()
        }
        .fingerprint()
    }

    pub fn label(&self) -> String {
        self.assignments
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Mean and sample standard deviation over a cell's seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Stat { mean, std })
    }
}

#[derive(Clone, Debug)]
pub struct CellSummary {
    pub cell: Cell,
    pub reports: Vec<MetricsReport>,
    pub gacc: Option<Stat>,
    pub pacc: Option<Stat>,
    pub zacc: Option<Stat>,
    pub collapse: Option<Stat>,
}

impl CellSummary {
    fn new(cell: Cell, reports: Vec<MetricsReport>) -> Self {
        let stat = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
            let xs: Vec<f64> = reports.iter().filter_map(f).collect();
            if xs.len() == reports.len() {
                Stat::of(&xs)
            } else {
                None
            }
        };
        CellSummary {
            gacc: stat(&|r| r.gacc),
            pacc: stat(&|r| Some(r.pacc)),
            zacc: stat(&|r| r.zacc),
            collapse: stat(&|r| r.collapse),
            cell,
            reports,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub cells: Vec<CellSummary>,
    pub new_runs: usize,
    pub reused_runs: usize,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.cells()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!(
                "cannot read experiment file {}: {e}",
                path.display()
            ))
        })?;
        Self::from_toml_str(&text)
    }

    /// Cartesian product of the sweep axes, keys in sorted order.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment needs at least one seed".into()));
        }
        self.base.validate()?;
        let mut cells = vec![Cell {
            assignments: Vec::new(),
            config: self.base.clone(),
        }];
        for (key, values) in &self.sweep {
            if key == "seed" {
                return Err(Error::Config(
                    "sweep seeds with the `seeds` list, not a sweep axis".into(),
                ));
            }
            if values.is_empty() {
                return Err(Error::Config(format!("sweep axis `{key}` has no values")));
            }
            let mut next = Vec::with_capacity(cells.len() * values.len());
            for cell in &cells {
                for v in values {
                    let mut assignments = cell.assignments.clone();
                    assignments.push((key.clone(), v.clone()));
                    next.push(Cell {
                        assignments,
                        config: cell.config.with_value(key, v.clone())?,
                    });
                }
            }
            cells = next;
        }
        Ok(cells)
    }
}

pub fn run_dir(output_dir: &Path, cfg: &FLConfig) -> PathBuf {
    output_dir.join("runs").join(cfg.fingerprint())
}

/// Runs every cell × seed that has no report yet and writes the summary.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let cells = spec.cells()?;
    let mut new_runs = 0;
    let mut reused_runs = 0;
    let mut summaries = Vec::with_capacity(cells.len());
    for cell in cells {
        let mut reports = Vec::with_capacity(spec.seeds.len());
        for &seed in &spec.seeds {
            let cfg = FLConfig {
                seed,
                ..cell.config.clone()
            };
            let dir = run_dir(&spec.output_dir, &cfg);
            if dir.join(REPORT_FILE).exists() {
                reports.push(load_report(&dir)?);
                reused_runs += 1;
            } else {
                reports.push(run_and_write(&cfg, &dir)?.report);
                new_runs += 1;
            }
        }
        summaries.push(CellSummary::new(cell, reports));
    }
    let csv = summary_csv(&summaries);
    crate::io::write_atomic(&spec.output_dir.join(SUMMARY_FILE), csv.as_bytes())?;
    Ok(ExperimentOutcome {
        cells: summaries,
        new_runs,
        reused_runs,
    })
}

fn stat_cols(s: Option<Stat>) -> String {
    match s {
        Some(s) => format!("{},{}", s.mean, s.std),
        None => ",".into(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn summary_csv(cells: &[CellSummary]) -> String {
    let mut s = String::from(
        "fingerprint,method,cell,seeds,gacc_mean,gacc_std,pacc_mean,pacc_std,zacc_mean,zacc_std,collapse_mean,collapse_std\n",
    );
    for c in cells {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            c.cell.fingerprint(),
            c.cell.config.method.as_str(),
            csv_field(&c.cell.label()),
            c.reports.len(),
            stat_cols(c.gacc),
            stat_cols(c.pacc),
            stat_cols(c.zacc),
            stat_cols(c.collapse),
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cartesian() {
        let spec = ExperimentSpec::from_toml_str(
            "output_dir = \"x\"\nseeds = [1, 2]\n[sweep]\nalpha = [0.0, 1.0]\nmethod = [\"fedavg\", \"local\", \"opt1\"]\n",
        )
        .unwrap();
        let cells = spec.cells().unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].assignments[0].0, "alpha");
        let fps: std::collections::BTreeSet<_> = cells.iter().map(|c| c.fingerprint()).collect();
        assert_eq!(fps.len(), 6);
    }

    #[test]
    fn unknown_axis_is_config_error() {
        let r = ExperimentSpec::from_toml_str("output_dir = \"x\"\n[sweep]\nnot_a_key = [1]\n");
        assert!(matches!(r, Err(Error::Config(_))));
        let r = ExperimentSpec::from_toml_str("output_dir = \"x\"\n[sweep]\nseed = [1]\n");
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn stat_uses_sample_std() {
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(Stat::of(&[5.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }
}
