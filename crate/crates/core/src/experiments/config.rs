use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datasets::{ExampleFunction, NormalizationKind};
use crate::distributions::ErrorDistribution;
use crate::error::{Error, Result};
use crate::losses::QuantileGrid;
use crate::models::{ModelFamily, ModelSpec};
use crate::sorting::SortMode;
use crate::training::{AdamConfig, FitConfig, StopRule, DEFAULT_BATCH_SIZE, DEFAULT_MAX_EPOCHS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Monte-Carlo comparison of all families on the synthetic benchmark.
    Exp1,
    /// Paired-seed race to a validation-loss threshold.
    Exp2,
    /// Forward-pass timing of SCQRNN against MCQRNN.
    Bench,
}

/// External data for the race, used instead of a synthetic example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub path: PathBuf,
    pub target: String,
    #[serde(default)]
    pub normalization: NormalizationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSettings {
    pub hidden_widths: Vec<usize>,
    pub levels: Vec<usize>,
    /// Number of hidden layers.
    pub depth: usize,
    pub input_width: usize,
    pub repetitions: usize,
    pub warmup: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            hidden_widths: vec![16, 32, 64, 128],
            levels: vec![8, 16, 32, 64],
            depth: 2,
            input_width: 2,
            repetitions: 101,
            warmup: 10,
        }
    }
}

/// Fully resolved experiment settings. Every field is written to
/// `config.json` alongside the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub families: Vec<ModelFamily>,
    pub examples: Vec<ExampleFunction>,
    pub distributions: Vec<ErrorDistribution>,
    /// Replaces the synthetic examples in the race.
    pub data: Option<CsvSource>,
    /// `None` picks the per-example default.
    pub hidden_widths: Option<Vec<usize>>,
    pub grid: QuantileGrid,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub stop_rules: Vec<StopRule>,
    pub runs: usize,
    pub base_seed: u64,
    pub samples: usize,
    /// Train/validation/test proportions.
    pub split: [f64; 3],
    pub sort_mode: SortMode,
    pub smoothing: Option<f64>,
    pub bench: BenchSettings,
}

impl ExperimentConfig {
    pub fn experiment1() -> Self {
        Self {
            experiment: ExperimentKind::Exp1,
            families: ModelFamily::ALL.to_vec(),
            examples: ExampleFunction::ALL.to_vec(),
            distributions: ErrorDistribution::benchmark_set().to_vec(),
            data: None,
            hidden_widths: None,
            grid: QuantileGrid::evenly_spaced(19).expect("valid grid"),
            optimizer: AdamConfig {
                lr: 0.01,
                weight_decay: 0.05,
                ..AdamConfig::default()
            },
            batch_size: DEFAULT_BATCH_SIZE,
            stop_rules: vec![
                StopRule::early_stopping(),
                StopRule::MaxEpochs {
                    epochs: DEFAULT_MAX_EPOCHS,
                },
            ],
            runs: 100,
            base_seed: 0,
            samples: 600,
            split: [1.0 / 3.0; 3],
            sort_mode: SortMode::Hard,
            smoothing: None,
            bench: BenchSettings::default(),
        }
    }

    /// Desk-scale race: example 2 with normal errors and a [64, 32, 16]
    /// network. The threshold sits just above the plateau most runs reach,
    /// so the median CQRNN needs a few dozen epochs.
    pub fn experiment2() -> Self {
        Self {
            experiment: ExperimentKind::Exp2,
            families: vec![ModelFamily::Scqrnn, ModelFamily::Cqrnn],
            examples: vec![ExampleFunction::Example2],
            distributions: vec![ErrorDistribution::benchmark_set()[0]],
            hidden_widths: Some(vec![64, 32, 16]),
            optimizer: AdamConfig {
                lr: 1e-3,
                weight_decay: 0.005,
                ..AdamConfig::default()
            },
            stop_rules: vec![StopRule::Threshold { value: 0.86 }, StopRule::MaxEpochs { epochs: 500 }],
            ..Self::experiment1()
        }
    }

    /// Large-scale race: [600, 300, 150], lr 1e-4, decay 0.005,
    /// threshold 0.05.
    pub fn experiment2_full_scale() -> Self {
        Self {
            hidden_widths: Some(vec![600, 300, 150]),
            optimizer: AdamConfig {
                lr: 1e-4,
                weight_decay: 0.005,
                ..AdamConfig::default()
            },
            stop_rules: vec![
                StopRule::Threshold { value: 0.05 },
                StopRule::MaxEpochs {
                    epochs: DEFAULT_MAX_EPOCHS,
                },
            ],
            ..Self::experiment2()
        }
    }

    pub fn bench() -> Self {
        Self {
            experiment: ExperimentKind::Bench,
            families: vec![ModelFamily::Scqrnn, ModelFamily::Mcqrnn],
            runs: 1,
            ..Self::experiment1()
        }
    }

    pub fn preset(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Exp1 => Self::experiment1(),
            ExperimentKind::Exp2 => Self::experiment2(),
            ExperimentKind::Bench => Self::bench(),
        }
    }

    /// Overlays the keys of a JSON object onto the preset for `kind`.
    /// Nested objects merge key by key; everything else replaces.
    pub fn from_json_overlay(kind: ExperimentKind, overlay: &Value) -> Result<Self> {
        let Value::Object(_) = overlay else {
            return Err(Error::Config("configuration must be a JSON object".into()));
        };
        if let Some(Value::String(s)) = overlay.get("experiment") {
            let declared: ExperimentKind = serde_json::from_value(Value::String(s.clone()))?;
            if declared != kind {
                return Err(Error::Config(format!(
                    "configuration is for '{s}', not '{}'",
                    kind.as_str()
                )));
            }
        }
        let mut base = serde_json::to_value(Self::preset(kind))?;
        merge(&mut base, overlay);
        let config: Self = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(kind: ExperimentKind, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text)?;
        Self::from_json_overlay(kind, &value)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.families.is_empty() {
            return Err(Error::Config("no model families selected".into()));
        }
        if self.data.is_none() && (self.examples.is_empty() || self.distributions.is_empty()) {
            return Err(Error::Config("no datasets selected".into()));
        }
        if let Some(src) = &self.data {
            if !src.path.is_file() {
                return Err(Error::Config(format!(
                    "data file {} does not exist",
                    src.path.display()
                )));
            }
        }
        if self.experiment == ExperimentKind::Exp2 {
            if self.families.len() != 2 {
                return Err(Error::Config("the race needs exactly two families".into()));
            }
            if !self.stop_rules.iter().any(|r| matches!(r, StopRule::Threshold { .. })) {
                return Err(Error::Config("the race needs a threshold stop rule".into()));
            }
        }
        if self.experiment == ExperimentKind::Bench {
            let b = &self.bench;
            if b.repetitions == 0 || b.depth == 0 || b.input_width == 0 {
                return Err(Error::Config(
                    "benchmark repetitions, depth and input width must be positive".into(),
                ));
            }
            if b.hidden_widths.contains(&0) || b.levels.contains(&0) {
                return Err(Error::Config("benchmark widths and levels must be positive".into()));
            }
        }
        if self.samples < 3 {
            return Err(Error::Config("need at least three samples to split".into()));
        }
        self.sort_mode.validate()?;
        self.fit_config(0).validate()
    }

    pub fn fit_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            optimizer: self.optimizer,
            batch_size: self.batch_size,
            stop_rules: self.stop_rules.clone(),
            seed,
        }
    }

    pub fn widths_for(&self, example: Option<ExampleFunction>) -> Vec<usize> {
        match (&self.hidden_widths, example) {
            (Some(w), _) => w.clone(),
            (None, Some(e)) => e.default_hidden_widths(),
            (None, None) => vec![5, 5],
        }
    }

    pub fn model_spec(&self, family: ModelFamily, input_width: usize, example: Option<ExampleFunction>) -> ModelSpec {
        let mut spec = ModelSpec::new(family, input_width, self.widths_for(example), self.grid.clone());
        spec.sort_mode = self.sort_mode;
        spec.smoothing = self.smoothing;
        spec
    }
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Exp1 => "exp1",
            ExperimentKind::Exp2 => "exp2",
            ExperimentKind::Bench => "bench",
        }
    }
}

fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot @ Value::Object(_)) if v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
