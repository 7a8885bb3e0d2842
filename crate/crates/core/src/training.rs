//! Adam, mini-batch fitting and stopping rules.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{build_design_matrix, ModelFamily, QuantileModel};
use crate::nn::{Gradients, Mlp};
use crate::rng::{derive_seed, Rng};
use crate::scalar::Scalar;

/// Stream index used to derive the batch-shuffling seed.
pub(crate) const SHUFFLE_STREAM: u64 = 1;

pub const DEFAULT_MAX_EPOCHS: usize = 2000;
pub const DEFAULT_PATIENCE: usize = 20;
pub const DEFAULT_BATCH_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply decay directly to the weights instead of adding it to the
    /// gradient.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled: false,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("learning rate", self.lr, self.lr > 0.0),
            ("beta1", self.beta1, (0.0..1.0).contains(&self.beta1)),
            ("beta2", self.beta2, (0.0..1.0).contains(&self.beta2)),
            ("adam epsilon", self.eps, self.eps > 0.0),
            ("weight decay", self.weight_decay, self.weight_decay >= 0.0),
        ];
        for (what, value, ok) in checks {
            if !(ok && value.is_finite()) {
                return Err(Error::Range { what, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<S>], &[Vec<S>]) {
        (&self.first, &self.second)
    }

    fn ensure_shapes(&mut self, sizes: impl Iterator<Item = usize> + Clone) -> Result<()> {
        if self.first.is_empty() {
            self.first = sizes.clone().map(|n| vec![S::zero(); n]).collect();
            self.second = sizes.map(|n| vec![S::zero(); n]).collect();
            return Ok(());
        }
        let known: Vec<usize> = self.first.iter().map(Vec::len).collect();
        let given: Vec<usize> = sizes.collect();
        if known != given {
            return Err(Error::shape(
                "adam_update",
                (known.len(), known.iter().sum()),
                (given.len(), given.iter().sum()),
            ));
        }
        Ok(())
    }

    fn update_tensor(&mut self, index: usize, params: &mut [S], grads: &[S]) {
        let c = &self.config;
        let (lr, b1, b2, eps, wd) = (
            S::of(c.lr),
            S::of(c.beta1),
            S::of(c.beta2),
            S::of(c.eps),
            S::of(c.weight_decay),
        );
        let t = self.step as i32;
        let bc1 = S::one() - S::of(c.beta1.powi(t));
        let bc2 = S::one() - S::of(c.beta2.powi(t));
        let m = &mut self.first[index];
        let v = &mut self.second[index];
        for (k, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            let g = if c.decoupled { g } else { g + wd * *p };
            m[k] = b1 * m[k] + (S::one() - b1) * g;
            v[k] = b2 * v[k] + (S::one() - b2) * g * g;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            if c.decoupled {
                *p -= lr * wd * *p;
            }
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    /// Updates a single flat parameter vector.
    pub fn update(&mut self, params: &mut [S], grads: &[S]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("adam_update", (params.len(), 1), (grads.len(), 1)));
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(non_finite_gradients());
        }
        self.ensure_shapes(std::iter::once(params.len()))?;
        self.step += 1;
        self.update_tensor(0, params, grads);
        Ok(())
    }

    /// Updates every parameter tensor of `net` and refreshes its effective
    /// weights.
    pub fn apply(&mut self, net: &mut Mlp<S>, grads: &Gradients<S>) -> Result<()> {
        let sizes: Vec<usize> = net.param_tensors().iter().map(|t| t.len()).collect();
        let given: Vec<usize> = grads.tensors.iter().map(Vec::len).collect();
        if sizes != given {
            return Err(Error::shape(
                "adam_update",
                (sizes.len(), sizes.iter().sum()),
                (given.len(), given.iter().sum()),
            ));
        }
        if !grads.is_finite() {
            return Err(non_finite_gradients());
        }
        self.ensure_shapes(sizes.into_iter())?;
        self.step += 1;
        net.update(|tensor, index| self.update_tensor(index, tensor, &grads.tensors[index]));
        Ok(())
    }
}

fn non_finite_gradients() -> Error {
    Error::NonFinite {
        context: "gradients".into(),
        epoch: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopRule {
    EarlyStopping {
        patience: usize,
        #[serde(default)]
        min_delta: f64,
        #[serde(default = "default_true")]
        restore_best: bool,
    },
    /// Stop after the first epoch whose validation loss is below `value`.
    Threshold {
        value: f64,
    },
    MaxEpochs {
        epochs: usize,
    },
}

fn default_true() -> bool {
    true
}

impl StopRule {
    pub fn early_stopping() -> Self {
        StopRule::EarlyStopping {
            patience: DEFAULT_PATIENCE,
            min_delta: 0.0,
            restore_best: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StopRule::EarlyStopping {
                patience, min_delta, ..
            } => {
                if patience < 1 {
                    return Err(Error::Range {
                        what: "patience",
                        value: patience as f64,
                    });
                }
                if !(min_delta >= 0.0 && min_delta.is_finite()) {
                    return Err(Error::Range {
                        what: "min delta",
                        value: min_delta,
                    });
                }
            }
            StopRule::Threshold { value } => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Error::Range {
                        what: "threshold",
                        value,
                    });
                }
            }
            StopRule::MaxEpochs { .. } => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Threshold,
    EarlyStopping,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::Threshold => "threshold",
            StopReason::EarlyStopping => "early_stopping",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    /// Without a `MaxEpochs` rule the run is capped at
    /// [`DEFAULT_MAX_EPOCHS`].
    pub stop_rules: Vec<StopRule>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            batch_size: DEFAULT_BATCH_SIZE,
            stop_rules: vec![StopRule::early_stopping()],
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Range {
                what: "batch size",
                value: 0.0,
            });
        }
        self.stop_rules.iter().try_for_each(StopRule::validate)
    }

    pub fn max_epochs(&self) -> usize {
        self.stop_rules
            .iter()
            .filter_map(|r| match r {
                StopRule::MaxEpochs { epochs } => Some(*epochs),
                _ => None,
            })
            .min()
            .unwrap_or(DEFAULT_MAX_EPOCHS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub per_epoch_train_loss: Vec<f64>,
    pub per_epoch_val_loss: Vec<f64>,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub seed: u64,
    /// Epoch (1-based) whose weights the model holds after an early stop
    /// with restoration.
    pub best_epoch: Option<usize>,
    /// Validation loss is the raw (unsmoothed) composite loss.
    pub val_loss_kind: String,
    pub wall_clock_millis: u64,
}

impl TrainingReport {
    /// True when the run hit the epoch cap without any other rule firing.
    pub fn capped(&self) -> bool {
        self.stop_reason == StopReason::MaxEpochs
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.per_epoch_val_loss.last().copied()
    }
}

/// Trains `model` on `train`, monitoring `val` after every epoch.
pub fn fit<S: Scalar>(
    model: &mut QuantileModel<S>,
    train: &Dataset<S>,
    val: &Dataset<S>,
    config: &FitConfig,
) -> Result<TrainingReport> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let width = model.spec().input_width;
    for (name, set) in [("train", train), ("validation", val)] {
        if set.x.cols() != width {
            return Err(Error::Config(format!(
                "{name} set has {} features, model expects {width}",
                set.x.cols()
            )));
        }
    }

    let started = Instant::now();
    let (rows_x, rows_y): (Matrix<S>, Vec<S>) = match model.family() {
        ModelFamily::Mcqrnn => {
            let design = build_design_matrix(&train.x, &train.y, &model.spec().grid)?;
            (design.sample_rows(), design.y_tilde)
        }
        _ => (train.x.clone(), train.y.clone()),
    };
    let mut optimizer = AdamState::new(config.optimizer)?;
    let mut shuffle = Rng::new(derive_seed(config.seed, SHUFFLE_STREAM));
    let max_epochs = config.max_epochs();

    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut best: Option<(f64, usize, Vec<S>)> = None;
    let mut stale = 0usize;
    let mut best_epoch = None;
    let mut reason = StopReason::MaxEpochs;

    let family = model.family();
    let diverged = |epoch: usize, what: &str| Error::NonFinite {
        context: format!("{family} {what}"),
        epoch: Some(epoch),
    };

    for epoch in 1..=max_epochs {
        let order = shuffle.permutation(rows_x.rows());
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let bx = rows_x.select_rows(chunk);
            let by: Vec<S> = chunk.iter().map(|&i| rows_y[i]).collect();
            let loss = model.train_step(&bx, &by, &mut optimizer).map_err(|e| match e {
                Error::NonFinite { .. } => diverged(epoch, "training loss"),
                other => other,
            })?;
            total += loss.as_f64() * chunk.len() as f64;
        }
        let train_loss = total / rows_x.rows() as f64;
        let val_loss = model
            .evaluation_loss(&val.x, &val.y)
            .map_err(|e| match e {
                Error::NonFinite { .. } => diverged(epoch, "validation loss"),
                other => other,
            })?
            .as_f64();
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(diverged(epoch, "loss"));
        }
        train_losses.push(train_loss);
        val_losses.push(val_loss);

        let mut stop = None;
        for rule in &config.stop_rules {
            match *rule {
                StopRule::Threshold { value } if val_loss < value => {
                    stop = stop.or(Some(StopReason::Threshold));
                }
                StopRule::EarlyStopping {
                    patience, min_delta, ..
                } => {
                    let improved = best.as_ref().is_none_or(|(b, _, _)| val_loss < b - min_delta);
                    if improved {
                        best = Some((val_loss, epoch, model.network().flat_params()));
                        stale = 0;
                    } else {
                        stale += 1;
                        if stale >= patience {
                            stop = stop.or(Some(StopReason::EarlyStopping));
                        }
                    }
                }
                _ => {}
            }
        }
        if let Some(r) = stop {
            reason = r;
            break;
        }
    }

    if reason == StopReason::EarlyStopping {
        let restore = config
            .stop_rules
            .iter()
            .any(|r| matches!(r, StopRule::EarlyStopping { restore_best: true, .. }));
        if let (true, Some((_, epoch, params))) = (restore, best.as_ref()) {
            model.network_mut().set_flat_params(params)?;
            best_epoch = Some(*epoch);
        }
    }

    Ok(TrainingReport {
        epochs_run: train_losses.len(),
        per_epoch_train_loss: train_losses,
        per_epoch_val_loss: val_losses,
        stop_reason: reason,
        seed: config.seed,
        best_epoch,
        val_loss_kind: "composite_raw".into(),
        wall_clock_millis: started.elapsed().as_millis() as u64,
    })
}
