//! Command-line front end: `magframe run <scenario>` and
//! `magframe list-experiments`.

pub mod experiments;
pub mod report;
pub mod scenario;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use report::{write_json, write_manifest, Report};
use scenario::{Experiment, Scenario};

/// Exit status for a run whose gates all passed.
pub const EXIT_OK: i32 = 0;
pub const EXIT_GATE_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "magframe", version, about = "Magnetic Gabor frame experiments")]
pub struct Cli {
    /// Size of the worker pool; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory, overriding the scenario's `out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment a scenario file names.
    Run { scenario: PathBuf },
    /// Print the experiment names with one-line descriptions.
    ListExperiments,
}

pub fn experiment_listing() -> String {
    let width = Experiment::ALL.iter().map(|e| e.name().len()).max().unwrap_or(0);
    Experiment::ALL
        .iter()
        .map(|e| format!("{:width$}  {}\n", e.name(), e.description()))
        .collect()
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::ListExperiments => {
            print!("{}", experiment_listing());
            EXIT_OK
        }
        Command::Run { ref scenario } => run(scenario, cli.out.as_deref(), cli.workers),
    }
}

fn run(path: &Path, out: Option<&Path>, workers: Option<usize>) -> i32 {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    };
    let stem = path.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
    let sc = match Scenario::parse(&text, &stem) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: invalid scenario {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    };
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        eprintln!("error: `--workers` must be positive");
        return EXIT_CONFIG;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {workers} workers: {e}");
            return EXIT_CONFIG;
        }
    };
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| sc.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&sc.name));
    if let Err(e) = fs::create_dir_all(&dir).and_then(|_| write_manifest(&dir, &sc, path, workers)) {
        eprintln!("error: cannot write to {}: {e}", dir.display());
        return EXIT_CONFIG;
    }
    log::info!("running {} on {} workers into {}", sc.experiment, workers, dir.display());
    let outcome = match pool.install(|| experiments::run_experiment(&sc, &dir)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {} could not run: {e}", sc.experiment);
            return EXIT_CONFIG;
        }
    };
    let report = Report::new(&sc, outcome.gates, outcome.results);
    if let Err(e) = write_json(&dir.join("report.json"), &report) {
        eprintln!("error: cannot write report: {e}");
        return EXIT_CONFIG;
    }
    for g in &report.gates {
        eprintln!(
            "{} {:<28} {:.3e} {} {:.1e}  [{}]",
            if g.passed { "pass" } else { "FAIL" },
            g.name,
            g.value,
            serde_json::to_value(g.relation).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            g.tolerance,
            g.invariant
        );
    }
    if report.passed {
        eprintln!("{}: all {} gates passed ({})", sc.name, report.gates.len(), dir.display());
        EXIT_OK
    } else {
        let names: Vec<&str> = report.failed().map(|g| g.name.as_str()).collect();
        eprintln!("{}: failed gates: {}", sc.name, names.join(", "));
        EXIT_GATE_FAILED
    }
}
