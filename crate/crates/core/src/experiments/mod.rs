//! Experiment drivers: the Monte-Carlo comparison, the convergence race and
//! the forward-pass benchmark, plus their file outputs.

mod bench;
mod config;
mod exp1;
mod exp2;
pub mod stats;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bench::{run_complexity_bench, BenchReport, BenchRow};
pub use config::{BenchSettings, CsvSource, ExperimentConfig, ExperimentKind};
pub use exp1::{run_experiment1, CellSummary, Experiment1Output};
pub use exp2::{run_experiment2, Experiment2Output, FamilyRace, FasterCounts, RaceSummary};

use crate::datasets::ExampleFunction;
use crate::distributions::ErrorDistribution;
use crate::error::{Error, Result};
use crate::metrics::EvalResult;
use crate::models::ModelFamily;
use crate::rng::derive_seed;
use crate::training::TrainingReport;

/// Seed of run `r`: every stochastic choice of the run derives from it.
pub fn run_seed(base: u64, run: usize) -> u64 {
    derive_seed(base, run as u64)
}

/// Data seed for one (example, distribution) cell of a run.
pub fn dataset_seed(run_seed: u64, example: ExampleFunction, dist: &ErrorDistribution) -> u64 {
    let code = match *dist {
        ErrorDistribution::Normal { mean, variance } => mean.to_bits() ^ variance.to_bits().rotate_left(17),
        ErrorDistribution::StudentT { dof } => (1 << 40) | dof as u64,
        ErrorDistribution::ChiSquared { dof } => (2 << 40) | dof as u64,
    };
    derive_seed(derive_seed(run_seed, 1000 + example.index() as u64), code)
}

pub const RUNS_CSV_HEADER: [&str; 9] = [
    "run",
    "seed",
    "family",
    "example",
    "dist",
    "rmse",
    "reliability",
    "epochs",
    "stop_reason",
];

/// One fitted (run, family, dataset) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub family: ModelFamily,
    pub example: String,
    pub dist: String,
    pub eval: Option<EvalResult>,
    pub report: Option<TrainingReport>,
    /// Set when the fit diverged or evaluation failed.
    pub error: Option<String>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn epochs(&self) -> Option<usize> {
        self.report.as_ref().map(|r| r.epochs_run)
    }

    pub fn stop_reason(&self) -> &'static str {
        match (&self.error, &self.report) {
            (Some(_), _) | (None, None) => "failed",
            (None, Some(r)) => r.stop_reason.as_str(),
        }
    }

    pub fn csv_row(&self) -> [String; 9] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.run.to_string(),
            self.seed.to_string(),
            self.family.name().to_string(),
            self.example.clone(),
            self.dist.clone(),
            opt(self.eval.as_ref().and_then(|e| e.rmse)),
            opt(self.eval.as_ref().map(|e| e.overall_reliability)),
            self.epochs().map(|e| e.to_string()).unwrap_or_default(),
            self.stop_reason().to_string(),
        ]
    }
}

pub fn write_runs_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RUNS_CSV_HEADER)?;
    for r in records {
        w.write_record(r.csv_row())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Wall-clock timings, kept apart from the reproducible result files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_millis: u64,
    pub fit_millis: Vec<u64>,
}
