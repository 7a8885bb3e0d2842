use std::cmp::Ordering;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::exp1::fit_and_evaluate;
use super::stats;
use super::{
    create_dir, dataset_seed, run_seed, write_json, write_runs_csv, ExperimentConfig, ExperimentKind, RunRecord, Timing,
};
use crate::datasets::{load_csv, Dataset, SplitSizes};
use crate::error::{Error, Result};
use crate::models::ModelFamily;
use crate::training::StopRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyRace {
    pub family: ModelFamily,
    /// Statistics over runs that did not diverge; capped runs count with
    /// the cap as their epoch number.
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub capped: usize,
    pub failed: usize,
}

/// Diverged runs lose to any finished run; two diverged runs tie.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FasterCounts {
    pub first: usize,
    pub second: usize,
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceSummary {
    pub experiment: String,
    pub runs: usize,
    pub dataset: String,
    pub threshold: f64,
    pub validation_loss: String,
    pub families: Vec<FamilyRace>,
    pub faster: FasterCounts,
    /// Per-run epochs, `[first, second]`, empty when a fit diverged.
    pub epochs: Vec<[Option<usize>; 2]>,
}

#[derive(Debug, Clone)]
pub struct Experiment2Output {
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    pub summary: RaceSummary,
    pub timing: Timing,
}

impl Experiment2Output {
    /// Writes `config.json`, `runs.csv`, `summary.json` and `timing.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        write_json(&dir.join("config.json"), &self.config)?;
        write_runs_csv(&dir.join("runs.csv"), &self.records)?;
        write_json(&dir.join("summary.json"), &self.summary)?;
        write_json(&dir.join("timing.json"), &self.timing)
    }
}

fn race_epochs(record: &RunRecord) -> Option<usize> {
    if record.failed() {
        None
    } else {
        record.epochs()
    }
}

/// Trains two families from identical initial weights on every run and
/// counts the epochs each needs to reach the validation-loss threshold.
pub fn run_experiment2(config: &ExperimentConfig) -> Result<Experiment2Output> {
    config.validate()?;
    if config.experiment != ExperimentKind::Exp2 {
        return Err(Error::Config("not a race configuration".into()));
    }
    let started = Instant::now();
    let threshold = config
        .stop_rules
        .iter()
        .find_map(|r| match r {
            StopRule::Threshold { value } => Some(*value),
            _ => None,
        })
        .expect("validated");
    let external: Option<Dataset<f64>> = match &config.data {
        Some(src) => Some(load_csv(&src.path, &src.target, src.normalization)?),
        None => None,
    };
    let (example, dist) = (config.examples[0], config.distributions[0]);
    let (dataset_label, dist_label) = match &config.data {
        Some(src) => (
            src.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            "csv".to_string(),
        ),
        None => (example.label().to_string(), dist.label()),
    };

    let per_run = |run: usize| -> Result<(Vec<RunRecord>, u64)> {
        let t0 = Instant::now();
        let seed = run_seed(config.base_seed, run);
        let (splits, width, example_hint) = match &external {
            Some(data) => (
                data.split(SplitSizes::Proportions(config.split), seed)?,
                data.input_width(),
                None,
            ),
            None => {
                let data_seed = dataset_seed(seed, example, &dist);
                let mut data: Dataset<f64> = example.generate(config.samples, dist, data_seed)?;
                data.attach_ideal(&config.grid)?;
                (
                    data.split(SplitSizes::Proportions(config.split), data_seed)?,
                    example.input_width(),
                    Some(example),
                )
            }
        };
        let fit_config = config.fit_config(seed);
        let records = config
            .families
            .iter()
            .map(|&family| {
                let spec = config.model_spec(family, width, example_hint);
                let (_, outcome) = fit_and_evaluate(spec, seed, &splits, &fit_config, &[family]).remove(0);
                let (eval, report, error) = match outcome {
                    Ok((e, r)) => (Some(e), Some(r), None),
                    Err(msg) => (None, None, Some(msg)),
                };
                RunRecord {
                    run,
                    seed,
                    family,
                    example: dataset_label.clone(),
                    dist: dist_label.clone(),
                    eval,
                    report,
                    error,
                }
            })
            .collect();
        Ok((records, t0.elapsed().as_millis() as u64))
    };
    let results: Vec<(Vec<RunRecord>, u64)> = (0..config.runs).into_par_iter().map(per_run).collect::<Result<_>>()?;
    let fit_millis = results.iter().map(|(_, ms)| *ms).collect();
    let records: Vec<RunRecord> = results.into_iter().flat_map(|(r, _)| r).collect();

    let epochs: Vec<[Option<usize>; 2]> = records
        .chunks(2)
        .map(|p| [race_epochs(&p[0]), race_epochs(&p[1])])
        .collect();
    let mut faster = FasterCounts {
        first: 0,
        second: 0,
        ties: 0,
    };
    for [a, b] in &epochs {
        let order = match (a, b) {
            (Some(a), Some(b)) => a.cmp(b),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        match order {
            Ordering::Less => faster.first += 1,
            Ordering::Greater => faster.second += 1,
            Ordering::Equal => faster.ties += 1,
        }
    }
    let families = config
        .families
        .iter()
        .enumerate()
        .map(|(k, &family)| {
            let done: Vec<f64> = epochs.iter().filter_map(|e| e[k].map(|v| v as f64)).collect();
            let mine = records.iter().skip(k).step_by(2);
            FamilyRace {
                family,
                median: stats::median(&done),
                mean: stats::mean(&done),
                std: stats::sample_std(&done),
                capped: mine
                    .clone()
                    .filter(|r| !r.failed() && r.report.as_ref().is_some_and(|x| x.capped()))
                    .count(),
                failed: mine.filter(|r| r.failed()).count(),
            }
        })
        .collect();

    Ok(Experiment2Output {
        config: config.clone(),
        summary: RaceSummary {
            experiment: "exp2".into(),
            runs: config.runs,
            dataset: format!("{dataset_label}/{dist_label}"),
            threshold,
            validation_loss: "composite_raw".into(),
            families,
            faster,
            epochs,
        },
        records,
        timing: Timing {
            total_millis: started.elapsed().as_millis() as u64,
            fit_millis,
        },
    })
}
