//! report.json, the run manifest, and decay tables.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::scenario::Scenario;
use crate::matrix_ops::DecayReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Below,
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

/// One pass/fail check, tied to the invariant it instantiates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub name: String,
    pub invariant: String,
    pub value: f64,
    pub relation: Relation,
    pub tolerance: f64,
    pub passed: bool,
}

impl Gate {
    pub fn new(name: &str, invariant: &str, value: f64, relation: Relation, tolerance: f64) -> Self {
        // NaN fails every comparison.
        let passed = match relation {
            Relation::Below => value < tolerance,
            Relation::AtMost => value <= tolerance,
            Relation::AtLeast => value >= tolerance,
        };
        Gate {
            name: name.to_string(),
            invariant: invariant.to_string(),
            value,
            relation,
            tolerance,
            passed,
        }
    }
}

/// Everything an experiment computed. Contains no timings or paths so that
/// identical scenarios give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub experiment: String,
    pub dimension: usize,
    pub seed: u64,
    pub passed: bool,
    pub gates: Vec<Gate>,
    pub results: Value,
}

impl Report {
    pub fn new(sc: &Scenario, gates: Vec<Gate>, results: Value) -> Self {
        Report {
            scenario: sc.name.clone(),
            experiment: sc.experiment.name().to_string(),
            dimension: sc.dimension,
            seed: sc.seed,
            passed: gates.iter().all(|g| g.passed),
            gates,
            results,
        }
    }

    pub fn failed(&self) -> impl Iterator<Item = &Gate> {
        self.gates.iter().filter(|g| !g.passed)
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    scenario_file: String,
    workers: usize,
    config: &'a Scenario,
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> io::Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(io::Error::other)?;
    s.push('\n');
    fs::write(path, s)
}

pub fn write_manifest(dir: &Path, sc: &Scenario, file: &Path, workers: usize) -> io::Result<()> {
    let m = Manifest {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        scenario_file: file.display().to_string(),
        workers,
        config: sc,
    };
    write_json(&dir.join("manifest.json"), &m)
}

/// Columns n1, n2, C, stable; C is the interior constant that the
/// stability flag refers to.
pub fn write_decay_csv(path: &Path, rep: &DecayReport) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["n1", "n2", "C", "stable"])?;
    for c in &rep.constants {
        let stable = c.stable.map_or(String::new(), |s| s.to_string());
        w.write_record([c.n1.to_string(), c.n2.to_string(), format!("{:e}", c.interior), stable])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_never_passes() {
        for r in [Relation::Below, Relation::AtMost, Relation::AtLeast] {
            assert!(!Gate::new("g", "i", f64::NAN, r, 1.0).passed);
        }
        assert!(Gate::new("g", "i", 0.0, Relation::AtMost, 0.0).passed);
        assert!(!Gate::new("g", "i", 0.0, Relation::Below, 0.0).passed);
    }
}
