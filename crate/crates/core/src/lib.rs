//! Multi-quantile regression networks.
//!
//! A feed-forward network predicts a whole grid of conditional quantiles at
//! once. Four model families share one trainer:
//!
//! * `cqrnn`: `T` outputs trained on the composite pinball loss;
//! * `cqrnnse`: the same network with its outputs sorted at prediction time;
//! * `scqrnn`: a hard or soft sorting layer inside the training graph;
//! * `mcqrnn`: a single-output network that is monotone in `τ`, fitted on the
//!   input tiled once per level.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix it to `f64`, which is what the experiment harness uses.

pub mod datasets;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod sorting;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type MatrixF64 = linalg::Matrix<f64>;
pub type MlpF64 = nn::Mlp<f64>;
pub type QuantileModelF64 = models::QuantileModel<f64>;
pub type DatasetF64 = datasets::Dataset<f64>;
pub type AdamStateF64 = training::AdamState<f64>;
