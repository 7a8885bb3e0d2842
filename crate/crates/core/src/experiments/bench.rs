use std::hint::black_box;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::stats;
use super::{create_dir, write_json, ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::QuantileGrid;
use crate::models::{ModelFamily, ModelSpec, QuantileModel};
use crate::rng::Rng;

/// Median single-sample forward time for one (width, levels) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub hidden: usize,
    pub levels: usize,
    pub scqrnn_nanos: f64,
    pub mcqrnn_nanos: f64,
    /// MCQRNN time over SCQRNN time.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub depth: usize,
    pub input_width: usize,
    pub repetitions: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, hidden: usize, levels: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.hidden == hidden && r.levels == levels)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["hidden", "levels", "scqrnn_ns", "mcqrnn_ns", "ratio"])?;
        for r in &self.rows {
            w.write_record([
                r.hidden.to_string(),
                r.levels.to_string(),
                r.scqrnn_nanos.to_string(),
                r.mcqrnn_nanos.to_string(),
                r.ratio.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes `config.json`, `bench.csv` and `summary.json`.
    pub fn write(&self, dir: &Path, config: &ExperimentConfig) -> Result<()> {
        create_dir(dir)?;
        write_json(&dir.join("config.json"), config)?;
        self.write_csv(&dir.join("bench.csv"))?;
        write_json(&dir.join("summary.json"), self)
    }
}

/// Shortest batch of calls that takes at least `floor`, so each timed
/// repetition is well above the clock resolution.
fn calibrate(floor: Duration, f: &mut impl FnMut()) -> u32 {
    let mut inner = 1u32;
    loop {
        let t = Instant::now();
        for _ in 0..inner {
            f();
        }
        if t.elapsed() >= floor || inner >= 1 << 20 {
            return inner;
        }
        inner *= 2;
    }
}

/// Median nanoseconds per call over `reps` timed repetitions.
pub fn median_nanos(reps: usize, warmup: usize, mut f: impl FnMut()) -> f64 {
    let inner = calibrate(Duration::from_micros(50), &mut f);
    for _ in 0..warmup {
        for _ in 0..inner {
            f();
        }
    }
    let samples: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..inner {
                f();
            }
            t.elapsed().as_nanos() as f64 / inner as f64
        })
        .collect();
    stats::median(&samples).unwrap_or(f64::NAN)
}

fn bench_model(
    family: ModelFamily,
    settings: &super::BenchSettings,
    hidden: usize,
    levels: usize,
) -> Result<QuantileModel<f64>> {
    let grid = QuantileGrid::evenly_spaced(levels)?;
    let spec = ModelSpec::new(family, settings.input_width, vec![hidden; settings.depth], grid);
    QuantileModel::new(spec, 0)
}

/// Times single-sample prediction of SCQRNN (one pass, `T` outputs, sort)
/// against MCQRNN (one pass over `T` tiled rows) on the configured grid of
/// widths and levels. Runs on the calling thread.
pub fn run_complexity_bench(config: &ExperimentConfig) -> Result<BenchReport> {
    config.validate()?;
    if config.experiment != ExperimentKind::Bench {
        return Err(Error::Config("not a benchmark configuration".into()));
    }
    let settings = &config.bench;
    let mut rng = Rng::new(config.base_seed);
    let x = Matrix::from_fn(1, settings.input_width, |_, _| rng.uniform(-1.0, 1.0));
    let mut rows = Vec::new();
    for &hidden in &settings.hidden_widths {
        for &levels in &settings.levels {
            let sc = bench_model(ModelFamily::Scqrnn, settings, hidden, levels)?;
            let mc = bench_model(ModelFamily::Mcqrnn, settings, hidden, levels)?;
            sc.predict(&x)?;
            mc.predict(&x)?;
            let sc_ns = median_nanos(settings.repetitions, settings.warmup, || {
                black_box(sc.predict(black_box(&x)).ok());
            });
            let mc_ns = median_nanos(settings.repetitions, settings.warmup, || {
                black_box(mc.predict(black_box(&x)).ok());
            });
            rows.push(BenchRow {
                hidden,
                levels,
                scqrnn_nanos: sc_ns,
                mcqrnn_nanos: mc_ns,
                ratio: mc_ns / sc_ns,
            });
        }
    }
    Ok(BenchReport {
        depth: settings.depth,
        input_width: settings.input_width,
        repetitions: settings.repetitions,
        rows,
    })
}
