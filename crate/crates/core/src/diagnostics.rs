//! Runtime self-checks behind `qrnet sort-check`: the sorted-loss
//! dominance property and finite-difference gradient suites.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::Matrix;
use crate::losses::{self, QuantileGrid};
use crate::nn::{Activation, Architecture, InitScheme, Mlp};
use crate::rng::Rng;
use crate::sorting::{self, SortMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceCheck {
    pub pairs: usize,
    pub levels: usize,
    /// Pairs whose sorted loss exceeded the unsorted loss.
    pub violations: usize,
    /// Pairs where sorting changed the prediction but not the loss.
    pub non_strict: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub name: String,
    pub configurations: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortCheckReport {
    pub seed: u64,
    pub dominance: DominanceCheck,
    pub gradients: Vec<GradientCheck>,
    pub passed: bool,
}

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
const SLACK: f64 = 1e-12;

/// Compares the composite loss of random predictions before and after a
/// row sort. Predictions are drawn around the target so that both signs of
/// the residual occur.
pub fn check_dominance(pairs: usize, levels: usize, rng: &mut Rng) -> Result<DominanceCheck> {
    let grid = QuantileGrid::evenly_spaced(levels)?;
    let (mut violations, mut non_strict) = (0, 0);
    for _ in 0..pairs {
        let y = rng.uniform(-3.0, 3.0);
        let spread = rng.uniform(0.1, 4.0);
        let pred = Matrix::from_fn(1, levels, |_, _| y + spread * rng.standard_normal());
        let sorted = sorting::sort_rows_hard(&pred);
        let raw = losses::composite_loss(&pred, &[y], &grid, None)?;
        let after = losses::composite_loss(&sorted, &[y], &grid, None)?;
        if after > raw + SLACK {
            violations += 1;
        }
        if sorted != pred && after >= raw {
            non_strict += 1;
        }
    }
    Ok(DominanceCheck {
        pairs,
        levels,
        violations,
        non_strict,
        passed: violations == 0 && non_strict == 0,
    })
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, with agreement on an all-zero gradient.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn summarise(name: impl Into<String>, errors: Vec<f64>) -> GradientCheck {
    let max = errors.iter().copied().fold(0.0, f64::max);
    GradientCheck {
        name: name.into(),
        configurations: errors.len(),
        max_relative_error: max,
        passed: max < GRADIENT_TOLERANCE,
    }
}

fn network_check(rng: &mut Rng, activation: Activation, monotone: bool, configs: usize) -> Result<GradientCheck> {
    let mut errors = Vec::new();
    while errors.len() < configs {
        let inputs = 1 + rng.below(3);
        let hidden = 1 + rng.below(4);
        let outputs = 1 + rng.below(3);
        let arch = Architecture {
            widths: vec![inputs, hidden, outputs],
            hidden_activation: activation,
            output_activation: Activation::Identity,
            monotone_inputs: monotone.then(|| (0..inputs).map(|i| i % 2 == 0).collect()),
        };
        let mut net: Mlp<f64> = Mlp::new(arch, rng, InitScheme::XavierUniform)?;
        let biases: Vec<f64> = net
            .flat_params()
            .iter()
            .map(|&p| if p == 0.0 { rng.uniform(-0.5, 0.5) } else { p })
            .collect();
        net.set_flat_params(&biases)?;
        let batch = 1 + rng.below(4);
        let x = Matrix::from_fn(batch, inputs, |_, _| rng.uniform(-1.5, 1.5));
        let c = Matrix::from_fn(batch, outputs, |_, _| rng.uniform(-1.0, 1.0));
        let objective = |net: &Mlp<f64>, x: &Matrix<f64>| -> f64 {
            let out = net.infer(x).expect("shapes fixed");
            out.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum()
        };
        if activation == Activation::Relu {
            // Skip draws with a pre-activation near the kink.
            let pre = x.matmul_transposed(net.layers()[0].effective_weights())?;
            let near_kink = pre
                .row_iter()
                .any(|r| r.iter().zip(net.layers()[0].bias()).any(|(z, b)| (z + b).abs() < 1e-4));
            if near_kink {
                continue;
            }
        }
        net.forward(&x)?;
        let (grads, grad_x) = net.backward(&c)?;
        let params = net.flat_params();
        let mut probe = net.clone();
        let numeric = numeric_gradient(&params, 1e-6, |p| {
            probe.set_flat_params(p).expect("same length");
            objective(&probe, &x)
        });
        let numeric_x = numeric_gradient(x.as_slice(), 1e-6, |v| {
            objective(&net, &Matrix::new(batch, inputs, v.to_vec()).expect("same shape"))
        });
        let mut analytic = grads.flat();
        analytic.extend_from_slice(grad_x.as_slice());
        let mut numeric_all = numeric;
        numeric_all.extend(numeric_x);
        errors.push(relative_error(&analytic, &numeric_all));
    }
    let kind = if monotone { "monotone" } else { "plain" };
    Ok(summarise(
        format!("network/{activation:?}/{kind}").to_lowercase(),
        errors,
    ))
}

fn sort_gradient_check(rng: &mut Rng, mode: SortMode, configs: usize) -> Result<GradientCheck> {
    let mut errors = Vec::new();
    for _ in 0..configs {
        let t = 2 + rng.below(12);
        let x: Vec<f64> = (0..t).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let w: Vec<f64> = (0..t).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let row = Matrix::new(1, t, x.clone())?;
        let (_, tapes) = sorting::sort_rows(&row, mode)?;
        let analytic = sorting::sort_rows_backward(&Matrix::new(1, t, w.clone())?, &tapes)?;
        let numeric = numeric_gradient(&x, 1e-7, |v| {
            let (s, _) = sorting::sort_rows(&Matrix::new(1, t, v.to_vec()).expect("shape"), mode).expect("valid mode");
            s.as_slice().iter().zip(&w).map(|(a, b)| a * b).sum()
        });
        errors.push(relative_error(analytic.as_slice(), &numeric));
    }
    let name = match mode {
        SortMode::Hard => "sort/hard".to_string(),
        SortMode::Soft { epsilon } => format!("sort/soft/{epsilon}"),
    };
    Ok(summarise(name, errors))
}

fn smoothed_loss_check(rng: &mut Rng, configs: usize) -> Result<GradientCheck> {
    let mut errors = Vec::new();
    for _ in 0..configs {
        let (n, t) = (1 + rng.below(5), 1 + rng.below(9));
        let grid = QuantileGrid::evenly_spaced(t)?;
        let eps = rng.uniform(0.05, 0.5);
        let pred = Matrix::from_fn(n, t, |_, _| rng.uniform(-2.0, 2.0));
        let y: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let analytic = losses::composite_loss_grad(&pred, &y, &grid, Some(eps))?;
        let numeric = numeric_gradient(pred.as_slice(), 1e-6, |v| {
            let p = Matrix::new(n, t, v.to_vec()).expect("shape");
            losses::composite_loss(&p, &y, &grid, Some(eps)).expect("valid")
        });
        errors.push(relative_error(analytic.as_slice(), &numeric));
    }
    Ok(summarise("loss/composite_smoothed", errors))
}

/// Runs the dominance check on `pairs` pairs and every gradient suite with
/// `configs` random configurations each.
pub fn sort_check(seed: u64, pairs: usize, configs: usize) -> Result<SortCheckReport> {
    let mut rng = Rng::new(seed);
    let dominance = check_dominance(pairs, 19, &mut rng)?;
    let mut gradients = Vec::new();
    for activation in Activation::all() {
        for monotone in [false, true] {
            gradients.push(network_check(&mut rng, activation, monotone, configs)?);
        }
    }
    for mode in [
        SortMode::Hard,
        SortMode::Soft { epsilon: 0.1 },
        SortMode::Soft { epsilon: 1.0 },
    ] {
        gradients.push(sort_gradient_check(&mut rng, mode, configs)?);
    }
    gradients.push(smoothed_loss_check(&mut rng, configs)?);
    let passed = dominance.passed && gradients.iter().all(|g| g.passed);
    Ok(SortCheckReport {
        seed,
        dominance,
        gradients,
        passed,
    })
}
