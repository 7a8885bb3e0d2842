use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::Spread;
use super::{create_dir, dataset_seed, run_seed, write_json, write_runs_csv, ExperimentConfig, RunRecord, Timing};
use crate::datasets::{Dataset, ExampleFunction, SplitSizes, Splits};
use crate::distributions::ErrorDistribution;
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::models::{ModelFamily, ModelSpec, QuantileModel};
use crate::training::{fit, FitConfig, TrainingReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub family: ModelFamily,
    pub example: String,
    pub dist: String,
    pub runs: usize,
    pub failures: usize,
    pub rmse: Option<Spread>,
    pub reliability: Option<Spread>,
    pub epochs: Option<Spread>,
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'static str,
    runs: usize,
    validation_loss: &'static str,
    cells: &'a [CellSummary],
}

#[derive(Debug, Clone)]
pub struct Experiment1Output {
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
    pub timing: Timing,
}

impl Experiment1Output {
    pub fn cell(
        &self,
        family: ModelFamily,
        example: ExampleFunction,
        dist: &ErrorDistribution,
    ) -> Option<&CellSummary> {
        let (e, d) = (example.label(), dist.label());
        self.cells
            .iter()
            .find(|c| c.family == family && c.example == e && c.dist == d)
    }

    /// Writes `config.json`, `runs.csv`, `summary.json` and `timing.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        write_json(&dir.join("config.json"), &self.config)?;
        write_runs_csv(&dir.join("runs.csv"), &self.records)?;
        let summary = Summary {
            experiment: "exp1",
            runs: self.config.runs,
            validation_loss: "composite_raw",
            cells: &self.cells,
        };
        write_json(&dir.join("summary.json"), &summary)?;
        write_json(&dir.join("timing.json"), &self.timing)
    }
}

/// Test metrics and training report, or the reason the fit failed.
pub(crate) type Scored = std::result::Result<(crate::metrics::EvalResult, TrainingReport), String>;

/// Trains one model and evaluates it (and, for CQRNN, its sorted twin) on
/// the test split. Divergence becomes a flagged record.
pub(crate) fn fit_and_evaluate(
    spec: ModelSpec,
    seed: u64,
    splits: &Splits<f64>,
    fit_config: &FitConfig,
    evaluate_as: &[ModelFamily],
) -> Vec<(ModelFamily, Scored)> {
    let trained = QuantileModel::new(spec, seed).and_then(|mut model| {
        let report = fit(&mut model, &splits.train, &splits.validation, fit_config)?;
        Ok((model, report))
    });
    evaluate_as
        .iter()
        .map(|&family| {
            let outcome = match &trained {
                Ok((model, report)) => score(model, family, &splits.test).map(|e| (e, report.clone())),
                Err(e) => Err(e.to_string()),
            };
            (family, outcome)
        })
        .collect()
}

fn score(
    model: &QuantileModel<f64>,
    family: ModelFamily,
    test: &Dataset<f64>,
) -> std::result::Result<crate::metrics::EvalResult, String> {
    let view = model.with_family(family).map_err(|e| e.to_string())?;
    let pred = view.predict(&test.x).map_err(|e| e.to_string())?;
    evaluate(&pred, &test.y, test.ideal.as_ref(), &view.spec().grid).map_err(|e| e.to_string())
}

struct Task {
    run: usize,
    example: ExampleFunction,
    dist: ErrorDistribution,
}

fn run_task(config: &ExperimentConfig, task: &Task) -> Result<(Vec<RunRecord>, u64)> {
    let started = Instant::now();
    let seed = run_seed(config.base_seed, task.run);
    let data_seed = dataset_seed(seed, task.example, &task.dist);
    let mut data: Dataset<f64> = task.example.generate(config.samples, task.dist, data_seed)?;
    data.attach_ideal(&config.grid)?;
    let splits = data.split(SplitSizes::Proportions(config.split), data_seed)?;
    let fit_config = config.fit_config(seed);
    let width = task.example.input_width();

    let mut outcomes = Vec::new();
    let shared: Vec<ModelFamily> = config
        .families
        .iter()
        .copied()
        .filter(|f| matches!(f, ModelFamily::Cqrnn | ModelFamily::CqrnnSe))
        .collect();
    if !shared.is_empty() {
        let spec = config.model_spec(ModelFamily::Cqrnn, width, Some(task.example));
        outcomes.extend(fit_and_evaluate(spec, seed, &splits, &fit_config, &shared));
    }
    for &family in &config.families {
        if matches!(family, ModelFamily::Scqrnn | ModelFamily::Mcqrnn) {
            let spec = config.model_spec(family, width, Some(task.example));
            outcomes.extend(fit_and_evaluate(spec, seed, &splits, &fit_config, &[family]));
        }
    }

    let records = config
        .families
        .iter()
        .map(|&family| {
            let (_, outcome) = outcomes
                .iter()
                .find(|(f, _)| *f == family)
                .expect("every family evaluated");
            let (eval, report, error) = match outcome {
                Ok((e, r)) => (Some(e.clone()), Some(r.clone()), None),
                Err(msg) => (None, None, Some(msg.clone())),
            };
            RunRecord {
                run: task.run,
                seed,
                family,
                example: task.example.label().into(),
                dist: task.dist.label(),
                eval,
                report,
                error,
            }
        })
        .collect();
    Ok((records, started.elapsed().as_millis() as u64))
}

/// Fits every selected family on every (example, distribution) dataset for
/// each run. Runs execute in parallel; output order is fixed by run index.
pub fn run_experiment1(config: &ExperimentConfig) -> Result<Experiment1Output> {
    config.validate()?;
    if config.data.is_some() {
        return Err(Error::Config(
            "the Monte-Carlo comparison uses synthetic data only".into(),
        ));
    }
    let started = Instant::now();
    let tasks: Vec<Task> = (0..config.runs)
        .flat_map(|run| {
            config.examples.iter().flat_map(move |&example| {
                config
                    .distributions
                    .iter()
                    .map(move |&dist| Task { run, example, dist })
            })
        })
        .collect();
    let results: Vec<(Vec<RunRecord>, u64)> = tasks.par_iter().map(|t| run_task(config, t)).collect::<Result<_>>()?;
    let fit_millis = results.iter().map(|(_, ms)| *ms).collect();
    let records: Vec<RunRecord> = results.into_iter().flat_map(|(r, _)| r).collect();

    let mut cells = Vec::new();
    for &family in &config.families {
        for example in &config.examples {
            for dist in &config.distributions {
                let (e, d) = (example.label(), dist.label());
                let rows: Vec<&RunRecord> = records
                    .iter()
                    .filter(|r| r.family == family && r.example == e && r.dist == d)
                    .collect();
                let ok: Vec<&&RunRecord> = rows.iter().filter(|r| !r.failed()).collect();
                let rmse: Vec<f64> = ok.iter().filter_map(|r| r.eval.as_ref()?.rmse).collect();
                let rel: Vec<f64> = ok
                    .iter()
                    .filter_map(|r| Some(r.eval.as_ref()?.overall_reliability))
                    .collect();
                let epochs: Vec<f64> = ok.iter().filter_map(|r| r.epochs().map(|e| e as f64)).collect();
                cells.push(CellSummary {
                    family,
                    example: e.into(),
                    dist: d,
                    runs: rows.len(),
                    failures: rows.len() - ok.len(),
                    rmse: Spread::of(&rmse),
                    reliability: Spread::of(&rel),
                    epochs: Spread::of(&epochs),
                });
            }
        }
    }
    Ok(Experiment1Output {
        config: config.clone(),
        records,
        cells,
        timing: Timing {
            total_millis: started.elapsed().as_millis() as u64,
            fit_millis,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::stats;
    use crate::training::StopRule;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            runs: 1,
            samples: 90,
            stop_rules: vec![StopRule::MaxEpochs { epochs: 3 }],
            ..ExperimentConfig::experiment1()
        }
    }

    #[test]
    fn single_cell_single_family() {
        let config = ExperimentConfig {
            families: vec![ModelFamily::Scqrnn],
            examples: vec![ExampleFunction::Example1],
            distributions: vec![ErrorDistribution::benchmark_set()[0]],
            ..tiny()
        };
        let out = run_experiment1(&config).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.cells.len(), 1);
        assert_eq!(out.records[0].epochs(), Some(3));
    }

    #[test]
    fn full_cross_product_with_shared_cqrnn() {
        let config = ExperimentConfig { runs: 2, ..tiny() };
        let out = run_experiment1(&config).unwrap();
        assert_eq!(out.records.len(), 2 * 4 * 3 * 3);
        for chunk in out.records.chunks(4) {
            let cq = chunk.iter().find(|r| r.family == ModelFamily::Cqrnn).unwrap();
            let se = chunk.iter().find(|r| r.family == ModelFamily::CqrnnSe).unwrap();
            assert_eq!(
                cq.report.as_ref().unwrap().per_epoch_val_loss,
                se.report.as_ref().unwrap().per_epoch_val_loss
            );
            assert_eq!((cq.run, &cq.example, &cq.dist), (se.run, &se.example, &se.dist));
        }
        assert!(out
            .records
            .iter()
            .all(|r| !r.failed() && r.eval.as_ref().unwrap().rmse.is_some()));
    }

    #[test]
    fn summary_recomputes_from_records() {
        let config = ExperimentConfig {
            runs: 4,
            examples: vec![ExampleFunction::Example0],
            ..tiny()
        };
        let out = run_experiment1(&config).unwrap();
        for cell in &out.cells {
            let rmse: Vec<f64> = out
                .records
                .iter()
                .filter(|r| r.family == cell.family && r.example == cell.example && r.dist == cell.dist)
                .map(|r| r.csv_row()[5].parse().unwrap())
                .collect();
            assert_eq!(rmse.len(), 4);
            assert_eq!(cell.rmse.unwrap().median, stats::median(&rmse).unwrap());
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let config = ExperimentConfig {
            runs: 3,
            examples: vec![ExampleFunction::Example2],
            ..tiny()
        };
        let a = run_experiment1(&config).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_experiment1(&config).unwrap());
        let rows = |o: &Experiment1Output| o.records.iter().map(RunRecord::csv_row).collect::<Vec<_>>();
        assert_eq!(rows(&a), rows(&b));
        assert_eq!(a.cells, b.cells);
    }

    #[test]
    fn rejects_csv_source() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "x,y\n1,2\n").unwrap();
        let config = ExperimentConfig {
            data: Some(crate::experiments::CsvSource {
                path,
                target: "y".into(),
                normalization: Default::default(),
            }),
            ..tiny()
        };
        assert!(run_experiment1(&config).is_err());
    }
}
