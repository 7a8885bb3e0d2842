//! The four multi-quantile model families.
//!
//! | family   | network output | training loss path              | evaluation        |
//! |----------|----------------|---------------------------------|-------------------|
//! | CQRNN    | `T` columns    | composite loss on raw outputs   | raw outputs       |
//! | CQRNNse  | `T` columns    | identical to CQRNN              | rows hard-sorted  |
//! | SCQRNN   | `T` columns    | composite loss after a sort layer, gradients routed back through it | sorted |
//! | MCQRNN   | 1 column       | per-level pinball loss on the tiled design matrix | one pass per level |
//!
//! SCQRNN and CQRNN(se) share their network layout, so models built from the
//! same seed start from identical weights. MCQRNN takes `(τ, x)` as input and
//! is monotone in `τ` through exponentiated weights.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::{self, QuantileGrid};
use crate::nn::{Activation, Architecture, InitScheme, Mlp};
use crate::rng::{derive_seed, Rng};
use crate::scalar::Scalar;
use crate::sorting::{self, SortMode};
use crate::training::AdamState;

/// Stream index used to derive the initialisation seed from a model seed.
pub(crate) const INIT_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Cqrnn,
    #[serde(rename = "cqrnnse")]
    CqrnnSe,
    Scqrnn,
    Mcqrnn,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::Scqrnn,
        ModelFamily::Mcqrnn,
        ModelFamily::Cqrnn,
        ModelFamily::CqrnnSe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Cqrnn => "CQRNN",
            ModelFamily::CqrnnSe => "CQRNNse",
            ModelFamily::Scqrnn => "SCQRNN",
            ModelFamily::Mcqrnn => "MCQRNN",
        }
    }

    /// Families whose predictions can never cross.
    pub fn guarantees_order(self) -> bool {
        !matches!(self, ModelFamily::Cqrnn)
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cqrnn" => Ok(ModelFamily::Cqrnn),
            "cqrnnse" | "cqrnn-se" => Ok(ModelFamily::CqrnnSe),
            "scqrnn" => Ok(ModelFamily::Scqrnn),
            "mcqrnn" => Ok(ModelFamily::Mcqrnn),
            other => Err(Error::Config(format!("unknown model family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    /// Number of original input features `M`.
    pub input_width: usize,
    pub hidden_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub grid: QuantileGrid,
    /// Only consulted by SCQRNN.
    #[serde(default)]
    pub sort_mode: SortMode,
    /// Huber smoothing of the training loss; `None` trains on the raw
    /// checker.
    #[serde(default)]
    pub smoothing: Option<f64>,
    /// Extra monotone input features for MCQRNN (indices into `x`); the τ
    /// input is always monotone.
    #[serde(default)]
    pub monotone_features: Vec<usize>,
    #[serde(default)]
    pub init: InitScheme,
}

impl ModelSpec {
    pub fn new(family: ModelFamily, input_width: usize, hidden_widths: Vec<usize>, grid: QuantileGrid) -> Self {
        Self {
            family,
            input_width,
            hidden_widths,
            activation: Activation::Tanh,
            grid,
            sort_mode: SortMode::Hard,
            smoothing: None,
            monotone_features: Vec::new(),
            init: InitScheme::XavierUniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 {
            return Err(Error::Config("input width must be positive".into()));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::Config(format!("invalid hidden widths {:?}", self.hidden_widths)));
        }
        self.sort_mode.validate()?;
        if let Some(eps) = self.smoothing {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::Range {
                    what: "huber smoothing",
                    value: eps,
                });
            }
        }
        if let Some(&bad) = self.monotone_features.iter().find(|&&i| i >= self.input_width) {
            return Err(Error::Config(format!("monotone feature {bad} out of range")));
        }
        Ok(())
    }

    /// Network input width: `M`, or `M + 1` for MCQRNN.
    pub fn network_input_width(&self) -> usize {
        match self.family {
            ModelFamily::Mcqrnn => self.input_width + 1,
            _ => self.input_width,
        }
    }

    pub fn network_output_width(&self) -> usize {
        match self.family {
            ModelFamily::Mcqrnn => 1,
            _ => self.grid.len(),
        }
    }

    pub fn architecture(&self) -> Architecture {
        let mut widths = vec![self.network_input_width()];
        widths.extend_from_slice(&self.hidden_widths);
        widths.push(self.network_output_width());
        let monotone_inputs = match self.family {
            ModelFamily::Mcqrnn => {
                let mut mask = vec![false; self.input_width + 1];
                mask[0] = true;
                for &i in &self.monotone_features {
                    mask[i + 1] = true;
                }
                Some(mask)
            }
            _ => None,
        };
        Architecture {
            widths,
            hidden_activation: self.activation,
            output_activation: Activation::Identity,
            monotone_inputs,
        }
    }
}

/// Tiled MCQRNN training set, stored features × samples: row 0 holds the
/// level of each column, rows `1..=M` the original features. Columns
/// `j·N .. (j+1)·N` carry level `τ_{j+1}` and a full copy of `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<S> {
    pub x_tilde: Matrix<S>,
    pub y_tilde: Vec<S>,
}

impl<S: Scalar> DesignMatrix<S> {
    /// One sample per row, `(T·N) × (M + 1)`, as consumed by the network.
    pub fn sample_rows(&self) -> Matrix<S> {
        self.x_tilde.transpose()
    }

    pub fn taus(&self) -> &[S] {
        self.x_tilde.row(0)
    }
}

/// `x` holds one sample per row (`N × M`).
pub fn build_design_matrix<S: Scalar>(x: &Matrix<S>, y: &[S], grid: &QuantileGrid) -> Result<DesignMatrix<S>> {
    if x.rows() == 0 {
        return Err(Error::Config("design matrix needs at least one sample".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::shape("build_design_matrix", x.shape(), (y.len(), 1)));
    }
    let (n, m) = x.shape();
    let taus = grid.cast::<S>();
    let t = taus.len();
    let x_tilde = Matrix::from_fn(m + 1, t * n, |r, c| {
        let (level, sample) = (c / n, c % n);
        if r == 0 {
            taus[level]
        } else {
            x.get(sample, r - 1)
        }
    });
    let y_tilde = (0..t).flat_map(|_| y.iter().copied()).collect();
    Ok(DesignMatrix { x_tilde, y_tilde })
}

/// `(T·N) × (M + 1)` network input for evaluating MCQRNN on every level,
/// level-major like the design matrix.
fn tiled_inputs<S: Scalar>(x: &Matrix<S>, taus: &[S]) -> Matrix<S> {
    let (n, m) = x.shape();
    Matrix::from_fn(taus.len() * n, m + 1, |r, c| {
        if c == 0 {
            taus[r / n]
        } else {
            x.get(r % n, c - 1)
        }
    })
}

#[derive(Debug, Clone)]
pub struct QuantileModel<S> {
    spec: ModelSpec,
    net: Mlp<S>,
}

impl<S: Scalar> QuantileModel<S> {
    /// Builds a model with weights drawn from `seed`. Two specs that differ
    /// only in CQRNN/CQRNNse/SCQRNN family receive identical weights.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::new(derive_seed(seed, INIT_STREAM));
        let net = Mlp::new(spec.architecture(), &mut rng, spec.init)?;
        Ok(Self { spec, net })
    }

    pub fn from_network(spec: ModelSpec, net: Mlp<S>) -> Result<Self> {
        spec.validate()?;
        if net.architecture() != &spec.architecture() {
            return Err(Error::Config("network layout does not match the model spec".into()));
        }
        Ok(Self { spec, net })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn family(&self) -> ModelFamily {
        self.spec.family
    }

    pub fn network(&self) -> &Mlp<S> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp<S> {
        &mut self.net
    }

    /// Same trained weights, evaluated as another family. Only valid between
    /// CQRNN, CQRNNse and SCQRNN.
    pub fn with_family(&self, family: ModelFamily) -> Result<Self> {
        if (family == ModelFamily::Mcqrnn || self.spec.family == ModelFamily::Mcqrnn) && family != self.spec.family {
            return Err(Error::Config(
                "MCQRNN weights cannot be reused by another family".into(),
            ));
        }
        let mut spec = self.spec.clone();
        spec.family = family;
        Ok(Self {
            spec,
            net: self.net.clone(),
        })
    }

    fn check_features(&self, x: &Matrix<S>) -> Result<()> {
        if x.cols() != self.spec.input_width {
            return Err(Error::shape("predict", x.shape(), (x.rows(), self.spec.input_width)));
        }
        Ok(())
    }

    /// Network outputs before any sort layer (`N × T`).
    pub fn raw_outputs(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        self.check_features(x)?;
        match self.spec.family {
            ModelFamily::Mcqrnn => {
                let n = x.rows();
                let taus = self.spec.grid.cast::<S>();
                let flat = self.net.infer(&tiled_inputs(x, &taus))?;
                Ok(Matrix::from_fn(n, taus.len(), |i, k| flat.get(k * n + i, 0)))
            }
            _ => self.net.infer(x),
        }
    }

    /// Predicted quantiles, one row per sample and one column per level.
    pub fn predict(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        let raw = self.raw_outputs(x)?;
        let out = match self.spec.family {
            ModelFamily::Cqrnn | ModelFamily::Mcqrnn => raw,
            ModelFamily::CqrnnSe => sorting::sort_rows_hard(&raw),
            ModelFamily::Scqrnn => sorting::sort_rows(&raw, self.spec.sort_mode)?.0,
        };
        if !out.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{} predictions", self.spec.family),
                epoch: None,
            });
        }
        Ok(out)
    }

    /// Composite loss of the model's own evaluation path (unsmoothed).
    pub fn evaluation_loss(&self, x: &Matrix<S>, y: &[S]) -> Result<S> {
        let pred = self.predict(x)?;
        losses::composite_loss(&pred, y, &self.spec.grid, None)
    }

    /// Training-objective loss on a batch without updating anything. For
    /// MCQRNN `batch_x` holds design-matrix rows (`τ` in column 0).
    pub fn batch_loss(&self, batch_x: &Matrix<S>, batch_y: &[S]) -> Result<S> {
        let smoothing = self.spec.smoothing;
        match self.spec.family {
            ModelFamily::Mcqrnn => {
                let out = self.net.infer(batch_x)?;
                losses::paired_tau_loss(out.as_slice(), batch_y, &batch_x.column_values(0), smoothing)
            }
            ModelFamily::Cqrnn | ModelFamily::CqrnnSe => {
                losses::composite_loss(&self.net.infer(batch_x)?, batch_y, &self.spec.grid, smoothing)
            }
            ModelFamily::Scqrnn => {
                let sorted = sorting::sort_rows(&self.net.infer(batch_x)?, self.spec.sort_mode)?.0;
                losses::composite_loss(&sorted, batch_y, &self.spec.grid, smoothing)
            }
        }
    }

    /// Loss and parameter gradients of the training objective on one batch.
    pub fn loss_and_gradients(&mut self, batch_x: &Matrix<S>, batch_y: &[S]) -> Result<(S, crate::nn::Gradients<S>)> {
        let smoothing = self.spec.smoothing;
        let out = self.net.forward(batch_x)?;
        let (loss, grad_out) = match self.spec.family {
            ModelFamily::Mcqrnn => {
                if batch_x.cols() != self.spec.input_width + 1 {
                    return Err(Error::shape(
                        "train_step",
                        batch_x.shape(),
                        (batch_x.rows(), self.spec.input_width + 1),
                    ));
                }
                let taus = batch_x.column_values(0);
                let loss = losses::paired_tau_loss(out.as_slice(), batch_y, &taus, smoothing)?;
                let g = losses::paired_tau_loss_grad(out.as_slice(), batch_y, &taus, smoothing)?;
                (loss, Matrix::column(&g))
            }
            ModelFamily::Cqrnn | ModelFamily::CqrnnSe => {
                let loss = losses::composite_loss(&out, batch_y, &self.spec.grid, smoothing)?;
                let g = losses::composite_loss_grad(&out, batch_y, &self.spec.grid, smoothing)?;
                (loss, g)
            }
            ModelFamily::Scqrnn => {
                let (sorted, tapes) = sorting::sort_rows(&out, self.spec.sort_mode)?;
                let loss = losses::composite_loss(&sorted, batch_y, &self.spec.grid, smoothing)?;
                let g = losses::composite_loss_grad(&sorted, batch_y, &self.spec.grid, smoothing)?;
                (loss, sorting::sort_rows_backward(&g, &tapes)?)
            }
        };
        if !loss.is_finite() {
            self.net.clear_caches();
            return Err(Error::NonFinite {
                context: format!("{} training loss", self.spec.family),
                epoch: None,
            });
        }
        let (grads, _) = self.net.backward(&grad_out)?;
        Ok((loss, grads))
    }

    /// One forward, backward and optimiser update. Returns the batch loss
    /// measured before the update.
    pub fn train_step(&mut self, batch_x: &Matrix<S>, batch_y: &[S], optimizer: &mut AdamState<S>) -> Result<S> {
        let (loss, grads) = self.loss_and_gradients(batch_x, batch_y)?;
        optimizer.apply(&mut self.net, &grads)?;
        Ok(loss)
    }

    pub fn to_saved(&self) -> SavedModel {
        let arch = self.net.architecture();
        SavedModel {
            header: ModelHeader {
                format: MODEL_FORMAT.to_string(),
                spec: self.spec.clone(),
                widths: arch.widths.clone(),
                monotone_mask: arch.monotone_inputs.clone(),
                param_count: self.net.param_count(),
            },
            params: self.net.flat_params().iter().map(|p| p.as_f64()).collect(),
        }
    }

    pub fn from_saved(saved: &SavedModel) -> Result<Self> {
        let spec = saved.header.spec.clone();
        spec.validate()?;
        let arch = spec.architecture();
        if arch.widths != saved.header.widths || saved.params.len() != saved.header.param_count {
            return Err(Error::Config("saved model header is inconsistent".into()));
        }
        let mut net = Mlp::new(arch, &mut Rng::new(0), spec.init)?;
        let flat: Vec<S> = saved.params.iter().map(|&p| S::of(p)).collect();
        net.set_flat_params(&flat)?;
        Ok(Self { spec, net })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_saved())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let saved: SavedModel = serde_json::from_str(&text)?;
        Self::from_saved(&saved)
    }
}

pub const MODEL_FORMAT: &str = "qrnet-model/1";

/// JSON header preceding the flat parameter array of a saved model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format: String,
    pub spec: ModelSpec,
    pub widths: Vec<usize>,
    pub monotone_mask: Option<Vec<bool>>,
    pub param_count: usize,
}

/// Serialised model: header plus parameters as float64, weights then bias,
/// layer by layer, weights row-major (`out × in`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub header: ModelHeader,
    pub params: Vec<f64>,
}
