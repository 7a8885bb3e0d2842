//! Noise distributions for the synthetic benchmarks.
//!
//! Each distribution exposes sampling, a closed-form CDF and density, and a
//! quantile function obtained by inverting the CDF numerically: a bracket is
//! grown until it straddles the target, bisection shrinks it, and a few
//! Newton steps polish the result. This keeps the inverse verifiable against
//! the closed forms instead of relying on rational approximations.
//!
//! The normal distribution is parameterised by **variance**, not standard
//! deviation: `Normal { mean: 0.0, variance: 0.25 }` has σ = 0.5.
//!
//! Student's t and χ² take positive integer degrees of freedom, for which
//! both CDFs have finite closed-form series.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorDistribution {
    Normal { mean: f64, variance: f64 },
    StudentT { dof: u32 },
    ChiSquared { dof: u32 },
}

impl ErrorDistribution {
    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Range {
                what: "normal variance",
                value: variance,
            });
        }
        if !mean.is_finite() {
            return Err(Error::Range {
                what: "normal mean",
                value: mean,
            });
        }
        Ok(Self::Normal { mean, variance })
    }

    pub fn student_t(dof: u32) -> Result<Self> {
        if dof == 0 {
            return Err(Error::Range {
                what: "student-t degrees of freedom",
                value: 0.0,
            });
        }
        Ok(Self::StudentT { dof })
    }

    pub fn chi_squared(dof: u32) -> Result<Self> {
        if dof == 0 {
            return Err(Error::Range {
                what: "chi-squared degrees of freedom",
                value: 0.0,
            });
        }
        Ok(Self::ChiSquared { dof })
    }

    /// The three noise settings of the Monte-Carlo benchmark:
    /// N(0, 0.25), t(3) and χ²(3).
    pub fn benchmark_set() -> [ErrorDistribution; 3] {
        [
            Self::Normal {
                mean: 0.0,
                variance: 0.25,
            },
            Self::StudentT { dof: 3 },
            Self::ChiSquared { dof: 3 },
        ]
    }

    /// Short stable identifier used in file names and CSV columns.
    pub fn label(&self) -> String {
        match *self {
            Self::Normal { mean, variance } if mean == 0.0 && variance == 0.25 => "normal".into(),
            Self::Normal { mean, variance } => format!("normal({mean},{variance})"),
            Self::StudentT { dof: 3 } => "t".into(),
            Self::StudentT { dof } => format!("t({dof})"),
            Self::ChiSquared { dof: 3 } => "chi2".into(),
            Self::ChiSquared { dof } => format!("chi2({dof})"),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Normal { mean, .. } => mean,
            Self::StudentT { .. } => 0.0,
            Self::ChiSquared { dof } => dof as f64,
        }
    }

    /// Variance; infinite for t with two or fewer degrees of freedom.
    pub fn variance(&self) -> f64 {
        match *self {
            Self::Normal { variance, .. } => variance,
            Self::StudentT { dof } if dof > 2 => dof as f64 / (dof as f64 - 2.0),
            Self::StudentT { .. } => f64::INFINITY,
            Self::ChiSquared { dof } => 2.0 * dof as f64,
        }
    }

    pub fn sample_one(&self, rng: &mut Rng) -> f64 {
        match *self {
            Self::Normal { mean, variance } => mean + variance.sqrt() * rng.standard_normal(),
            Self::StudentT { dof } => {
                let z = rng.standard_normal();
                let v = chi_squared_draw(dof, rng);
                z / (v / dof as f64).sqrt()
            }
            Self::ChiSquared { dof } => chi_squared_draw(dof, rng),
        }
    }

    pub fn sample(&self, rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Normal { mean, variance } => {
                let z = (x - mean) / variance.sqrt();
                0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
            }
            Self::StudentT { dof } => student_t_cdf(x, dof),
            Self::ChiSquared { dof } => chi_squared_cdf(x, dof),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Self::Normal { mean, variance } => {
                let z = (x - mean) / variance.sqrt();
                (-0.5 * z * z).exp() / (2.0 * PI * variance).sqrt()
            }
            Self::StudentT { dof } => {
                let nu = dof as f64;
                let log_norm = libm::lgamma((nu + 1.0) / 2.0) - libm::lgamma(nu / 2.0) - 0.5 * (nu * PI).ln();
                (log_norm - (nu + 1.0) / 2.0 * (x * x / nu).ln_1p()).exp()
            }
            Self::ChiSquared { dof } => {
                if x <= 0.0 {
                    // The k = 1 density diverges at 0; treat the boundary as outside.
                    return if x == 0.0 && dof == 2 { 0.5 } else { 0.0 };
                }
                let half_k = dof as f64 / 2.0;
                ((half_k - 1.0) * x.ln() - x / 2.0 - half_k * std::f64::consts::LN_2 - libm::lgamma(half_k)).exp()
            }
        }
    }

    /// Inverse CDF. `tau` must lie strictly inside `(0, 1)`.
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Range {
                what: "quantile level",
                value: tau,
            });
        }
        let (lo, hi) = self.bracket(tau);
        Ok(self.invert(tau, lo, hi))
    }

    fn bracket(&self, tau: f64) -> (f64, f64) {
        let (center, scale) = match *self {
            Self::Normal { mean, variance } => (mean, variance.sqrt()),
            Self::StudentT { .. } => (0.0, 1.0),
            Self::ChiSquared { dof } => (dof as f64, (2.0 * dof as f64).sqrt()),
        };
        let floor = match self {
            Self::ChiSquared { .. } => Some(0.0),
            _ => None,
        };
        let mut step = scale;
        let mut lo = center - step;
        let mut hi = center + step;
        if let Some(f) = floor {
            lo = lo.max(f);
        }
        while self.cdf(lo) > tau {
            step *= 2.0;
            lo = center - step;
            if let Some(f) = floor {
                if lo <= f {
                    lo = f;
                    break;
                }
            }
        }
        step = scale;
        while self.cdf(hi) < tau {
            step *= 2.0;
            hi = center + step;
        }
        (lo, hi)
    }

    fn invert(&self, tau: f64, mut lo: f64, mut hi: f64) -> f64 {
        // Bisection down to a relative width where Newton converges in a step
        // or two from anywhere inside the bracket.
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < tau {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-9 * (1.0 + mid.abs()) {
                break;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..8 {
            let f = self.cdf(x) - tau;
            let d = self.pdf(x);
            if f == 0.0 || d.is_nan() || d <= 0.0 {
                break;
            }
            let next = (x - f / d).clamp(lo, hi);
            if (next - x).abs() <= 1e-16 * (1.0 + x.abs()) {
                x = next;
                break;
            }
            x = next;
        }
        x
    }
}

fn chi_squared_draw(dof: u32, rng: &mut Rng) -> f64 {
    (0..dof)
        .map(|_| {
            let z = rng.standard_normal();
            z * z
        })
        .sum()
}

/// Student-t CDF for integer degrees of freedom via the trigonometric series
/// in θ = atan(t/√ν). For ν = 3 this reduces to
/// ½ + (1/π)[(t/√3)/(1 + t²/3) + atan(t/√3)].
fn student_t_cdf(t: f64, dof: u32) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let nu = dof as f64;
    let theta = (t / nu.sqrt()).atan();
    let (s, c) = theta.sin_cos();
    let c2 = c * c;
    // A(t) = P(|T| <= |t|) signed by t.
    let a = if dof % 2 == 1 {
        let mut series = 0.0;
        if dof > 1 {
            // cosθ + (2/3)cos³θ + (2·4)/(3·5)cos⁵θ + ... up to cos^(ν-2)θ
            let mut term = c;
            series = term;
            let mut j = 1;
            while 2 * j + 1 < dof {
                term *= c2 * (2 * j) as f64 / (2 * j + 1) as f64;
                series += term;
                j += 1;
            }
        }
        2.0 / PI * (theta + s * series)
    } else {
        // 1 + ½cos²θ + (1·3)/(2·4)cos⁴θ + ... up to cos^(ν-2)θ
        let mut term = 1.0;
        let mut series = 1.0;
        let mut j = 1;
        while 2 * j < dof {
            term *= c2 * (2 * j - 1) as f64 / (2 * j) as f64;
            series += term;
            j += 1;
        }
        s * series
    };
    0.5 + 0.5 * a
}

/// χ² CDF for integer degrees of freedom, i.e. the regularised lower
/// incomplete gamma P(k/2, x/2) written as a finite series. For k = 3 this is
/// erf(√(x/2)) − √(2x/π)·e^{−x/2}.
fn chi_squared_cdf(x: f64, dof: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let h = x / 2.0;
    if dof.is_multiple_of(2) {
        // 1 − e^{−h} Σ_{j<k/2} h^j / j!
        let mut term = 1.0;
        let mut sum = 1.0;
        for j in 1..dof / 2 {
            term *= h / j as f64;
            sum += term;
        }
        (1.0 - (-h).exp() * sum).clamp(0.0, 1.0)
    } else {
        // erf(√h) − e^{−h} Σ_{j=0}^{(k−3)/2} h^{j+½} / Γ(j + 3/2)
        let mut sum = 0.0;
        if dof >= 3 {
            // Γ(3/2) = √π / 2
            let mut term = h.sqrt() / (PI.sqrt() / 2.0);
            sum = term;
            for j in 1..=(dof as usize - 3) / 2 {
                term *= h / (j as f64 + 0.5);
                sum += term;
            }
        }
        (libm::erf(h.sqrt()) - (-h).exp() * sum).clamp(0.0, 1.0)
    }
}

impl fmt::Display for ErrorDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for ErrorDistribution {
    type Err = Error;

    /// Accepts the benchmark presets: `normal`, `t`, `chi2` (and a few
    /// spelled-out aliases).
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "gauss" | "gaussian" => Ok(Self::Normal {
                mean: 0.0,
                variance: 0.25,
            }),
            "t" | "student-t" | "student_t" | "studentt" | "t3" => Ok(Self::StudentT { dof: 3 }),
            "chi2" | "chisq" | "chi-squared" | "chi_squared" | "chi2_3" => Ok(Self::ChiSquared { dof: 3 }),
            other => Err(Error::Config(format!(
                "unknown distribution '{other}' (expected normal, t or chi2)"
            ))),
        }
    }
}
