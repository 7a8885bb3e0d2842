//! Accuracy and calibration metrics for multi-quantile predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::{self, QuantileGrid};
use crate::scalar::Scalar;

/// Root mean squared difference over all `N·T` entries.
pub fn rmse_vs_ideal<S: Scalar>(pred: &Matrix<S>, ideal: &Matrix<S>) -> Result<f64> {
    if pred.shape() != ideal.shape() {
        return Err(Error::shape("rmse_vs_ideal", pred.shape(), ideal.shape()));
    }
    if pred.as_slice().is_empty() {
        return Err(Error::Config("rmse of an empty matrix".into()));
    }
    let sum: f64 = pred
        .as_slice()
        .iter()
        .zip(ideal.as_slice())
        .map(|(p, q)| (p.as_f64() - q.as_f64()).powi(2))
        .sum();
    Ok((sum / pred.as_slice().len() as f64).sqrt())
}

/// Fraction of targets at or below each predicted quantile column. A
/// prediction equal to its target counts as covering it.
pub fn observed_frequency<S: Scalar>(pred: &Matrix<S>, y: &[S]) -> Result<Vec<f64>> {
    if pred.rows() != y.len() || y.is_empty() {
        return Err(Error::shape("observed_frequency", pred.shape(), (y.len(), 1)));
    }
    let mut hits = vec![0usize; pred.cols()];
    for (row, &target) in pred.row_iter().zip(y) {
        for (h, &p) in hits.iter_mut().zip(row) {
            if p >= target {
                *h += 1;
            }
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / y.len() as f64).collect())
}

/// Mean absolute gap between observed frequencies and nominal levels.
pub fn overall_reliability(freqs: &[f64], grid: &QuantileGrid) -> Result<f64> {
    if freqs.len() != grid.len() {
        return Err(Error::shape("overall_reliability", (freqs.len(), 1), (grid.len(), 1)));
    }
    Ok(freqs.iter().zip(grid.taus()).map(|(v, t)| (v - t).abs()).sum::<f64>() / freqs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Only available when ideal quantiles are known.
    pub rmse: Option<f64>,
    pub overall_reliability: f64,
    pub per_tau_observed_freq: Vec<f64>,
    pub test_pinball: f64,
}

impl EvalResult {
    pub fn csv_header(grid: &QuantileGrid) -> Vec<String> {
        let mut h = vec!["rmse".to_string(), "reliability".into(), "pinball".into()];
        h.extend(grid.taus().iter().map(|t| format!("freq{t}")));
        h
    }

    /// One CSV row matching [`EvalResult::csv_header`]; a missing RMSE is an
    /// empty cell.
    pub fn csv_row(&self) -> Vec<String> {
        let mut row = vec![
            self.rmse.map(|r| r.to_string()).unwrap_or_default(),
            self.overall_reliability.to_string(),
            self.test_pinball.to_string(),
        ];
        row.extend(self.per_tau_observed_freq.iter().map(f64::to_string));
        row
    }
}

pub fn evaluate<S: Scalar>(
    pred: &Matrix<S>,
    y: &[S],
    ideal: Option<&Matrix<S>>,
    grid: &QuantileGrid,
) -> Result<EvalResult> {
    if pred.cols() != grid.len() {
        return Err(Error::shape("evaluate", pred.shape(), (pred.rows(), grid.len())));
    }
    let freqs = observed_frequency(pred, y)?;
    Ok(EvalResult {
        rmse: ideal.map(|q| rmse_vs_ideal(pred, q)).transpose()?,
        overall_reliability: overall_reliability(&freqs, grid)?,
        per_tau_observed_freq: freqs,
        test_pinball: losses::composite_loss(pred, y, grid, None)?.as_f64(),
    })
}
