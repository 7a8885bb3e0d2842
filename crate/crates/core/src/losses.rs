//! Pinball (checker) losses for single and composite quantile regression.
//!
//! The checker function is `ρ_τ(u) = τ·u` for `u ≥ 0` and `(τ − 1)·u`
//! otherwise, with `u = y − ŷ`. The composite loss averages it over all
//! samples and all levels of a [`QuantileGrid`].
//!
//! The optional smoothed variant swaps `|u|` for the Huber function
//!
//! ```text
//! h_ε(v) = v² / (2ε)      if |v| ≤ ε
//!        = |v| − ε/2      otherwise
//! ρ_τ^ε(u) = τ·h_ε(u)      if u ≥ 0
//!          = (1 − τ)·h_ε(u) if u < 0
//! ```
//!
//! which has a continuous first derivative. Away from the origin it sits
//! below the raw checker by `τ·ε/2` (right branch) or `(1 − τ)·ε/2` (left).
//!
//! The unsmoothed derivative at a zero residual is taken to be 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Strictly increasing quantile levels in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileGrid {
    taus: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::Config("quantile grid is empty".into()));
        }
        for &t in &taus {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Range {
                    what: "quantile level",
                    value: t,
                });
            }
        }
        if taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "quantile levels must be strictly increasing: {taus:?}"
            )));
        }
        Ok(Self { taus })
    }

    /// `τ_i = i / (T + 1)` for `i = 1..=T`; `T = 19` gives `0.05, …, 0.95`.
    pub fn evenly_spaced(t: usize) -> Result<Self> {
        Self::new((1..=t).map(|i| i as f64 / (t + 1) as f64).collect())
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn cast<S: Scalar>(&self) -> Vec<S> {
        self.taus.iter().map(|&t| S::of(t)).collect()
    }
}

impl TryFrom<Vec<f64>> for QuantileGrid {
    type Error = Error;

    fn try_from(taus: Vec<f64>) -> Result<Self> {
        Self::new(taus)
    }
}

impl From<QuantileGrid> for Vec<f64> {
    fn from(grid: QuantileGrid) -> Self {
        grid.taus
    }
}

#[inline]
pub fn checker<S: Scalar>(u: S, tau: S) -> S {
    if u >= S::zero() {
        tau * u
    } else {
        (tau - S::one()) * u
    }
}

/// Derivative of [`checker`] in `u`, 0 at the kink.
#[inline]
pub fn checker_derivative<S: Scalar>(u: S, tau: S) -> S {
    if u > S::zero() {
        tau
    } else if u < S::zero() {
        tau - S::one()
    } else {
        S::zero()
    }
}

#[inline]
fn huber<S: Scalar>(v: S, eps: S) -> S {
    let a = v.abs();
    if a <= eps {
        v * v / (S::of(2.0) * eps)
    } else {
        a - eps / S::of(2.0)
    }
}

#[inline]
fn huber_derivative<S: Scalar>(v: S, eps: S) -> S {
    if v.abs() <= eps {
        v / eps
    } else {
        v.signum()
    }
}

pub fn huber_checker<S: Scalar>(u: S, tau: S, eps: S) -> Result<S> {
    check_smoothing(eps.as_f64())?;
    Ok(huber_checker_unchecked(u, tau, eps))
}

pub fn huber_checker_derivative<S: Scalar>(u: S, tau: S, eps: S) -> Result<S> {
    check_smoothing(eps.as_f64())?;
    Ok(huber_checker_derivative_unchecked(u, tau, eps))
}

#[inline]
fn huber_checker_unchecked<S: Scalar>(u: S, tau: S, eps: S) -> S {
    let weight = if u >= S::zero() { tau } else { S::one() - tau };
    weight * huber(u, eps)
}

#[inline]
fn huber_checker_derivative_unchecked<S: Scalar>(u: S, tau: S, eps: S) -> S {
    let weight = if u >= S::zero() { tau } else { S::one() - tau };
    weight * huber_derivative(u, eps)
}

fn check_smoothing(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Range {
            what: "huber smoothing",
            value: eps,
        })
    }
}

#[inline]
fn point_loss<S: Scalar>(u: S, tau: S, smoothing: Option<S>) -> S {
    match smoothing {
        None => checker(u, tau),
        Some(eps) => huber_checker_unchecked(u, tau, eps),
    }
}

#[inline]
fn point_derivative<S: Scalar>(u: S, tau: S, smoothing: Option<S>) -> S {
    match smoothing {
        None => checker_derivative(u, tau),
        Some(eps) => huber_checker_derivative_unchecked(u, tau, eps),
    }
}

fn check_composite<S: Scalar>(pred: &Matrix<S>, y: &[S], grid: &QuantileGrid, smoothing: Option<f64>) -> Result<()> {
    if pred.rows() != y.len() || pred.cols() != grid.len() {
        return Err(Error::shape("composite_loss", pred.shape(), (y.len(), grid.len())));
    }
    if let Some(eps) = smoothing {
        check_smoothing(eps)?;
    }
    Ok(())
}

/// `(1 / TN) Σ_k Σ_i ρ_{τ_k}(y_i − pred[i, k])`.
pub fn composite_loss<S: Scalar>(pred: &Matrix<S>, y: &[S], grid: &QuantileGrid, smoothing: Option<f64>) -> Result<S> {
    check_composite(pred, y, grid, smoothing)?;
    let taus = grid.cast::<S>();
    let eps = smoothing.map(S::of);
    let mut total = S::zero();
    for (row, &target) in pred.row_iter().zip(y) {
        for (&p, &tau) in row.iter().zip(&taus) {
            total += point_loss(target - p, tau, eps);
        }
    }
    Ok(total / S::of_usize(pred.rows() * pred.cols()))
}

/// Gradient of [`composite_loss`] with respect to `pred`.
pub fn composite_loss_grad<S: Scalar>(
    pred: &Matrix<S>,
    y: &[S],
    grid: &QuantileGrid,
    smoothing: Option<f64>,
) -> Result<Matrix<S>> {
    check_composite(pred, y, grid, smoothing)?;
    let taus = grid.cast::<S>();
    let eps = smoothing.map(S::of);
    let scale = S::one() / S::of_usize(pred.rows() * pred.cols());
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    for (i, &target) in y.iter().enumerate() {
        for (k, &tau) in taus.iter().enumerate() {
            // d/dŷ ρ(y − ŷ) = −ρ'(y − ŷ)
            grad.set(i, k, -point_derivative(target - pred.get(i, k), tau, eps) * scale);
        }
    }
    Ok(grad)
}

/// Mean pinball loss of one quantile level.
pub fn per_tau_loss<S: Scalar>(pred: &[S], y: &[S], tau: f64) -> Result<S> {
    if pred.len() != y.len() {
        return Err(Error::shape("per_tau_loss", (pred.len(), 1), (y.len(), 1)));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Range {
            what: "quantile level",
            value: tau,
        });
    }
    let tau = S::of(tau);
    let total: S = pred.iter().zip(y).map(|(&p, &t)| checker(t - p, tau)).sum();
    Ok(total / S::of_usize(pred.len()))
}

/// Mean pinball loss where every prediction carries its own level, as for
/// the monotone network trained on the tiled design matrix.
pub fn paired_tau_loss<S: Scalar>(pred: &[S], y: &[S], taus: &[S], smoothing: Option<f64>) -> Result<S> {
    check_paired(pred, y, taus, smoothing)?;
    let eps = smoothing.map(S::of);
    let total: S = pred
        .iter()
        .zip(y)
        .zip(taus)
        .map(|((&p, &t), &tau)| point_loss(t - p, tau, eps))
        .sum();
    Ok(total / S::of_usize(pred.len()))
}

pub fn paired_tau_loss_grad<S: Scalar>(pred: &[S], y: &[S], taus: &[S], smoothing: Option<f64>) -> Result<Vec<S>> {
    check_paired(pred, y, taus, smoothing)?;
    let eps = smoothing.map(S::of);
    let scale = S::one() / S::of_usize(pred.len());
    Ok(pred
        .iter()
        .zip(y)
        .zip(taus)
        .map(|((&p, &t), &tau)| -point_derivative(t - p, tau, eps) * scale)
        .collect())
}

fn check_paired<S: Scalar>(pred: &[S], y: &[S], taus: &[S], smoothing: Option<f64>) -> Result<()> {
    if pred.len() != y.len() || pred.len() != taus.len() || pred.is_empty() {
        return Err(Error::shape("paired_tau_loss", (pred.len(), 1), (y.len(), taus.len())));
    }
    if let Some(eps) = smoothing {
        check_smoothing(eps)?;
    }
    Ok(())
}
