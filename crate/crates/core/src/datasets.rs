//! Synthetic benchmark data, ideal quantiles, splitting and CSV I/O.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distributions::ErrorDistribution;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::QuantileGrid;
use crate::rng::{derive_seed, Rng};
use crate::scalar::Scalar;

/// Stream index used to derive the split-shuffle seed from a data seed.
pub(crate) const SPLIT_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleFunction {
    Example0,
    Example1,
    Example2,
}

impl ExampleFunction {
    pub const ALL: [ExampleFunction; 3] = [
        ExampleFunction::Example0,
        ExampleFunction::Example1,
        ExampleFunction::Example2,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            ExampleFunction::Example0 => "example0",
            ExampleFunction::Example1 => "example1",
            ExampleFunction::Example2 => "example2",
        }
    }

    pub fn input_width(self) -> usize {
        match self {
            ExampleFunction::Example1 => 1,
            _ => 2,
        }
    }

    /// Hidden widths used for this example in the benchmark experiment.
    pub fn default_hidden_widths(self) -> Vec<usize> {
        match self {
            ExampleFunction::Example0 => vec![4, 4],
            _ => vec![5, 5],
        }
    }

    /// Function value with the error term removed.
    pub fn noise_free(self, x: &[f64]) -> f64 {
        match self {
            ExampleFunction::Example0 => (2.0 * x[0]).sin() + 2.0 * (-16.0 * x[1] * x[1]).exp(),
            ExampleFunction::Example1 => {
                let x = x[0];
                (1.0 - x - 2.0 * x * x) * (-0.5 * x * x).exp()
            }
            ExampleFunction::Example2 => {
                let sq = |a: f64, b: f64| (x[0] - a).powi(2) + (x[1] - b).powi(2);
                40.0 * sq(0.5, 0.5).exp() / ((8.0 * sq(0.2, 0.7)).exp() + (8.0 * sq(0.7, 0.7)).exp())
            }
        }
    }

    /// Coefficient of the error term at `x`.
    pub fn noise_scale(self, x: &[f64]) -> f64 {
        match self {
            ExampleFunction::Example0 => 0.5,
            ExampleFunction::Example1 => (1.0 + 0.2 * x[0]) / 5.0,
            ExampleFunction::Example2 => 1.0,
        }
    }

    pub fn value(self, x: &[f64], eps: f64) -> f64 {
        self.noise_free(x) + self.noise_scale(x) * eps
    }

    fn sample_input(self, rng: &mut Rng, out: &mut [f64]) {
        match self {
            ExampleFunction::Example0 => out.iter_mut().for_each(|v| *v = rng.standard_normal()),
            ExampleFunction::Example1 => out[0] = rng.uniform(-4.0, 4.0),
            ExampleFunction::Example2 => out.iter_mut().for_each(|v| *v = rng.uniform(0.0, 1.0)),
        }
    }

    pub fn generate<S: Scalar>(self, n: usize, dist: ErrorDistribution, seed: u64) -> Result<Dataset<S>> {
        let mut rng = Rng::new(seed);
        self.generate_with(n, dist, &mut rng)
    }

    pub fn generate_with<S: Scalar>(self, n: usize, dist: ErrorDistribution, rng: &mut Rng) -> Result<Dataset<S>> {
        if n == 0 {
            return Err(Error::Config("cannot generate an empty dataset".into()));
        }
        let m = self.input_width();
        let mut x = Matrix::zeros(n, m);
        let mut y = Vec::with_capacity(n);
        let mut row = vec![0.0; m];
        for i in 0..n {
            self.sample_input(rng, &mut row);
            let eps = dist.sample_one(rng);
            y.push(S::of(self.value(&row, eps)));
            for (j, &v) in row.iter().enumerate() {
                x.set(i, j, S::of(v));
            }
        }
        let meta = DatasetMeta {
            source: DataSource::Generated {
                example: self,
                distribution: dist,
                seed: rng.seed(),
                n,
            },
            feature_names: (1..=m).map(|j| format!("x{j}")).collect(),
            target_name: "y".into(),
            normalization: None,
            grid: None,
        };
        Ok(Dataset {
            x,
            y,
            ideal: None,
            meta,
        })
    }

    /// True conditional quantiles: the error quantile at each level
    /// substituted for the error term.
    pub fn ideal_quantiles<S: Scalar>(
        self,
        dist: ErrorDistribution,
        x: &Matrix<S>,
        grid: &QuantileGrid,
    ) -> Result<Matrix<S>> {
        if x.cols() != self.input_width() {
            return Err(Error::shape(
                "ideal_quantiles",
                x.shape(),
                (x.rows(), self.input_width()),
            ));
        }
        let q: Vec<f64> = grid.taus().iter().map(|&t| dist.quantile(t)).collect::<Result<_>>()?;
        let mut out = Matrix::zeros(x.rows(), q.len());
        let mut row = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = x.get(i, j).as_f64();
            }
            for (k, &qk) in q.iter().enumerate() {
                out.set(i, k, S::of(self.value(&row, qk)));
            }
        }
        Ok(out)
    }
}

impl fmt::Display for ExampleFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ExampleFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s
            .to_ascii_lowercase()
            .trim_start_matches("example")
            .trim_start_matches("ex")
        {
            "0" => Ok(ExampleFunction::Example0),
            "1" => Ok(ExampleFunction::Example1),
            "2" => Ok(ExampleFunction::Example2),
            _ => Err(Error::Config(format!("unknown example function '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Generated {
        example: ExampleFunction,
        distribution: ErrorDistribution,
        seed: u64,
        n: usize,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationKind {
    #[default]
    None,
    MinMax,
    ZScore,
}

impl FromStr for NormalizationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(NormalizationKind::None),
            "minmax" | "min_max" | "min-max" => Ok(NormalizationKind::MinMax),
            "zscore" | "z_score" | "z-score" => Ok(NormalizationKind::ZScore),
            other => Err(Error::Config(format!("unknown normalization '{other}'"))),
        }
    }
}

/// Per-feature affine map applied on load: `x' = (x − offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub kind: NormalizationKind,
    pub offsets: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Normalization {
    pub fn fit<S: Scalar>(kind: NormalizationKind, x: &Matrix<S>) -> Self {
        let mut offsets = Vec::with_capacity(x.cols());
        let mut scales = Vec::with_capacity(x.cols());
        for j in 0..x.cols() {
            let col: Vec<f64> = x.column_values(j).iter().map(|v| v.as_f64()).collect();
            let (offset, scale) = match kind {
                NormalizationKind::None => (0.0, 1.0),
                NormalizationKind::MinMax => {
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi - lo)
                }
                NormalizationKind::ZScore => {
                    let n = col.len() as f64;
                    let mean = col.iter().sum::<f64>() / n;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    (mean, var.sqrt())
                }
            };
            offsets.push(offset);
            scales.push(if scale > 0.0 { scale } else { 1.0 });
        }
        Self { kind, offsets, scales }
    }

    pub fn apply<S: Scalar>(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        if x.cols() != self.offsets.len() {
            return Err(Error::shape("normalize", x.shape(), (x.rows(), self.offsets.len())));
        }
        Ok(Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            S::of((x.get(i, j).as_f64() - self.offsets[j]) / self.scales[j])
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: DataSource,
    pub feature_names: Vec<String>,
    pub target_name: String,
    #[serde(default)]
    pub normalization: Option<Normalization>,
    /// Levels of the attached ideal quantiles.
    #[serde(default)]
    pub grid: Option<QuantileGrid>,
}

impl DatasetMeta {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub x: Matrix<S>,
    pub y: Vec<S>,
    /// `N × T` true quantiles, synthetic data only.
    pub ideal: Option<Matrix<S>>,
    pub meta: DatasetMeta,
}

/// Part sizes for [`Dataset::split`], in train/validation/test order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSizes {
    Proportions([f64; 3]),
    Counts([usize; 3]),
}

impl SplitSizes {
    pub fn thirds() -> Self {
        SplitSizes::Proportions([1.0 / 3.0; 3])
    }

    pub fn counts(train: usize, validation: usize, test: usize) -> Self {
        SplitSizes::Counts([train, validation, test])
    }

    fn resolve(self, n: usize) -> Result<[usize; 3]> {
        let counts = match self {
            SplitSizes::Counts(c) => {
                if c.iter().sum::<usize>() != n {
                    return Err(Error::Config(format!("split counts {c:?} do not sum to {n}")));
                }
                c
            }
            SplitSizes::Proportions(p) => {
                if p.iter().any(|v| v.is_nan() || *v < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("split proportions {p:?} must sum to 1")));
                }
                let train = (n as f64 * p[0]).round() as usize;
                let val = ((n as f64 * p[1]).round() as usize).min(n - train.min(n));
                [train.min(n), val, n - train.min(n) - val]
            }
        };
        if counts.contains(&0) {
            return Err(Error::Config(format!(
                "split of {n} samples leaves an empty part: {counts:?}"
            )));
        }
        Ok(counts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits<S> {
    pub train: Dataset<S>,
    pub validation: Dataset<S>,
    pub test: Dataset<S>,
}

impl<S: Scalar> Dataset<S> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.x.cols()
    }

    /// Computes and stores the ideal quantiles of a generated dataset.
    pub fn attach_ideal(&mut self, grid: &QuantileGrid) -> Result<()> {
        match &self.meta.source {
            DataSource::Generated {
                example, distribution, ..
            } => {
                self.ideal = Some(example.ideal_quantiles(*distribution, &self.x, grid)?);
                self.meta.grid = Some(grid.clone());
                Ok(())
            }
            DataSource::Csv { .. } => Err(Error::Config("ideal quantiles need a known generator".into())),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Dataset<S> {
        Dataset {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            ideal: self.ideal.as_ref().map(|m| m.select_rows(indices)),
            meta: self.meta.clone(),
        }
    }

    /// Seeded shuffle followed by a contiguous split.
    pub fn split(&self, sizes: SplitSizes, seed: u64) -> Result<Splits<S>> {
        let [a, b, _] = sizes.resolve(self.len())?;
        let order = Rng::new(derive_seed(seed, SPLIT_STREAM)).permutation(self.len());
        Ok(Splits {
            train: self.select(&order[..a]),
            validation: self.select(&order[a..a + b]),
            test: self.select(&order[a + b..]),
        })
    }

    /// Seeded two-way split holding out `fraction` of the samples.
    pub fn holdout(&self, fraction: f64, seed: u64) -> Result<(Dataset<S>, Dataset<S>)> {
        let held = (self.len() as f64 * fraction).round() as usize;
        if !(0.0..1.0).contains(&fraction) || held == 0 || held == self.len() {
            return Err(Error::Config(format!(
                "holding out {fraction} of {} samples leaves an empty part",
                self.len()
            )));
        }
        let order = Rng::new(derive_seed(seed, SPLIT_STREAM)).permutation(self.len());
        let cut = self.len() - held;
        Ok((self.select(&order[..cut]), self.select(&order[cut..])))
    }

    pub fn cast<T: Scalar>(&self) -> Dataset<T> {
        Dataset {
            x: self.x.cast(),
            y: self.y.iter().map(|v| T::of(v.as_f64())).collect(),
            ideal: self.ideal.as_ref().map(Matrix::cast),
            meta: self.meta.clone(),
        }
    }

    /// Writes features then target, with a header row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.meta.feature_names.clone();
        header.push(self.meta.target_name.clone());
        w.write_record(&header)?;
        for (row, y) in self.x.row_iter().zip(&self.y) {
            w.write_record(row.iter().chain(std::iter::once(y)).map(|v| v.as_f64().to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes the ideal quantiles, one column per level named `q<τ>`.
    pub fn write_ideal_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let (Some(ideal), Some(grid)) = (&self.ideal, &self.meta.grid) else {
            return Err(Error::Config("dataset has no ideal quantiles".into()));
        };
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(grid.taus().iter().map(|t| format!("q{t}")))?;
        for row in ideal.row_iter() {
            w.write_record(row.iter().map(|v| v.as_f64().to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a numeric CSV with a header row. Every column except `target`
/// becomes a feature, in header order. Parse errors report the 1-based file
/// line and column.
pub fn load_csv<S: Scalar>(
    path: impl AsRef<Path>,
    target: &str,
    normalization: NormalizationKind,
) -> Result<Dataset<S>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target_col = header.iter().position(|h| h == target).ok_or_else(|| Error::Parse {
        row: 1,
        column: 0,
        message: format!("missing target column '{target}'"),
    })?;
    let m = header.len() - 1;
    let mut features = Vec::new();
    let mut y = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row: line,
                column: record.len().min(header.len()) + 1,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: line,
                column: j + 1,
                message: format!("non-numeric cell '{cell}'"),
            })?;
            if j == target_col {
                y.push(S::of(v));
            } else {
                features.push(S::of(v));
            }
        }
    }
    if y.is_empty() {
        return Err(Error::Parse {
            row: 2,
            column: 0,
            message: "no data rows".into(),
        });
    }
    let mut x = Matrix::new(y.len(), m, features)?;
    let norm = match normalization {
        NormalizationKind::None => None,
        kind => {
            let n = Normalization::fit(kind, &x);
            x = n.apply(&x)?;
            Some(n)
        }
    };
    let feature_names = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target_col)
        .map(|(_, h)| h.clone())
        .collect();
    Ok(Dataset {
        x,
        y,
        ideal: None,
        meta: DatasetMeta {
            source: DataSource::Csv {
                path: path.to_path_buf(),
            },
            feature_names,
            target_name: target.to_string(),
            normalization: norm,
            grid: None,
        },
    })
}
