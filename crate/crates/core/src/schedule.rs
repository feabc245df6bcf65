//! Scheduled time pairs `s(t)` with `∫_{s}^{t} ρ = λ`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::processes::{BetaSchedule, DiffusionProcess};

pub const DEFAULT_LAMBDA: f64 = 1e-2;
pub const DEFAULT_GAP: f64 = 0.05;
const BISECTION_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    LambdaLinear,
    LambdaInverseOneMinusT,
    LambdaCosine,
    LambdaNumeric,
    FixedGap,
}

/// Integrand that the λ rule holds fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    /// Largest diagonal entry of `g gᵀ(t)`.
    #[default]
    G2,
    /// The drift scale β(t).
    Beta,
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

fn default_gap() -> f64 {
    DEFAULT_GAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_gap")]
    pub gap: f64,
    #[serde(default)]
    pub rate: RateKind,
    /// Overrides the automatic cutoff below which `s = 0`.
    #[serde(default)]
    pub t_min: Option<f64>,
}

impl ScheduleSpec {
    pub fn lambda(kind: ScheduleKind, lambda: f64) -> Self {
        Self {
            kind,
            lambda,
            gap: DEFAULT_GAP,
            rate: RateKind::G2,
            t_min: None,
        }
    }

    pub fn fixed_gap(gap: f64) -> Self {
        Self {
            kind: ScheduleKind::FixedGap,
            lambda: DEFAULT_LAMBDA,
            gap,
            rate: RateKind::G2,
            t_min: None,
        }
    }
}

/// Closed form for `β(t) = beta_min + slope·t`; `None` when the root is not
/// in `[0, t)`.
fn linear_closed_form(t: f64, lambda: f64, beta_min: f64, slope: f64) -> Option<f64> {
    let bt = beta_min + slope * t;
    if slope == 0.0 {
        return (bt > 0.0).then(|| t - lambda / bt);
    }
    let disc = bt * bt - 2.0 * lambda * slope;
    if disc < 0.0 || bt <= 0.0 {
        return None;
    }
    // ε = (β(t) − √disc)/slope, rationalized to avoid cancellation.
    let eps = 2.0 * lambda / (bt + disc.sqrt());
    let s = t - eps;
    (s >= 0.0 && s < t).then_some(s)
}

/// `s(t)` for `β(t) = beta_min + slope·t`.
///
/// Returns 0 when `∫_0^t β ≤ λ` and otherwise the closed-form root, falling
/// back to bisection if the closed form is not admissible.
pub fn s_lambda_linear(t: f64, lambda: f64, beta_min: f64, slope: f64, t_min: f64) -> f64 {
    if t <= t_min {
        return 0.0;
    }
    let beta = BetaSchedule::Linear {
        beta0: beta_min,
        beta1: beta_min + slope,
    };
    if beta.integral(0.0, t) <= lambda {
        return 0.0;
    }
    linear_closed_form(t, lambda, beta_min, slope)
        .unwrap_or_else(|| s_lambda_numeric(t, lambda, |a, b| beta.integral(a, b)))
}

/// `s(t) = 1 − (1 − t)·e^λ` for `β(t) = 1/(1 − t)`.
pub fn s_lambda_inverse(t: f64, lambda: f64) -> f64 {
    (1.0 - (1.0 - t) * lambda.exp()).max(0.0)
}

/// `s(t) = (2/π)·acos(e^{πλ/2}·cos(πt/2))` for `β(t) = tan(πt/2)`.
pub fn s_lambda_cosine(t: f64, lambda: f64) -> f64 {
    let arg = (FRAC_PI_2 * lambda).exp() * (FRAC_PI_2 * t).cos();
    if arg >= 1.0 {
        0.0
    } else {
        arg.acos() / FRAC_PI_2
    }
}

/// Bisection for `∫_s^t ρ = λ` given the integral `rho_integral(s, t)`.
pub fn s_lambda_numeric<F>(t: f64, lambda: f64, rho_integral: F) -> f64
where
    F: Fn(f64, f64) -> f64,
{
    if rho_integral(0.0, t) <= lambda {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, t);
    while hi - lo > BISECTION_TOL * t.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if rho_integral(mid, t) > lambda {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn fixed_gap(t: f64, gap: f64) -> f64 {
    (t - gap).max(0.0)
}

/// A schedule bound to the rate function of a particular process.
#[derive(Debug, Clone)]
pub struct TimePairSchedule {
    spec: ScheduleSpec,
    beta: BetaSchedule,
    /// `ρ = factor·β`.
    factor: f64,
    t_min: f64,
}

impl TimePairSchedule {
    pub fn for_process(spec: ScheduleSpec, process: &dyn DiffusionProcess) -> Result<Self> {
        let (beta, factor) = match spec.rate {
            RateKind::G2 => process.noise_rate(),
            RateKind::Beta => (
                process.drift_scale().ok_or_else(|| {
                    Error::InvalidParameter("rate = beta needs a drift of the form β(t)·h(y)".into())
                })?,
                1.0,
            ),
        };
        Self::new(spec, beta, factor)
    }

    pub fn new(spec: ScheduleSpec, beta: BetaSchedule, factor: f64) -> Result<Self> {
        if spec.kind == ScheduleKind::FixedGap {
            if !(spec.gap > 0.0) {
                return Err(Error::InvalidParameter(format!("gap {}", spec.gap)));
            }
        } else if !(spec.lambda > 0.0) || !(factor > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda {}", spec.lambda)));
        }
        let compatible = match spec.kind {
            ScheduleKind::LambdaLinear => {
                matches!(beta, BetaSchedule::Linear { .. } | BetaSchedule::Constant { .. })
            }
            ScheduleKind::LambdaInverseOneMinusT => {
                matches!(beta, BetaSchedule::InverseOneMinusT { offset, .. } if offset == 0.0)
            }
            ScheduleKind::LambdaCosine => {
                matches!(beta, BetaSchedule::Cosine { offset, .. } if offset == 0.0)
            }
            _ => true,
        };
        if !compatible {
            return Err(Error::InvalidParameter(format!(
                "schedule {:?} has no closed form for {beta:?}",
                spec.kind
            )));
        }
        let natural = match spec.kind {
            ScheduleKind::FixedGap => spec.gap,
            _ => {
                // Largest t with ∫_0^t ρ ≤ λ.
                let target = spec.lambda / factor;
                let (mut lo, mut hi) = (0.0, 1.0);
                while beta.integral(0.0, hi) < target && hi < 1e6 {
                    lo = hi;
                    hi *= 2.0;
                }
                while hi - lo > BISECTION_TOL * hi {
                    let mid = 0.5 * (lo + hi);
                    if beta.integral(0.0, mid) <= target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            }
        };
        let t_min = spec.t_min.unwrap_or(natural);
        Ok(Self {
            spec,
            beta,
            factor,
            t_min,
        })
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.factor * self.beta.beta(t)
    }

    pub fn rate_integral(&self, s: f64, t: f64) -> f64 {
        self.factor * self.beta.integral(s, t)
    }

    pub fn s(&self, t: f64) -> f64 {
        if t <= self.t_min {
            return 0.0;
        }
        let lambda = self.spec.lambda / self.factor;
        let numeric = || s_lambda_numeric(t, lambda, |a, b| self.beta.integral(a, b));
        let s = match (self.spec.kind, self.beta) {
            (ScheduleKind::FixedGap, _) => fixed_gap(t, self.spec.gap),
            (ScheduleKind::LambdaLinear, BetaSchedule::Linear { beta0, beta1 }) => {
                s_lambda_linear(t, lambda, beta0, beta1 - beta0, 0.0)
            }
            (ScheduleKind::LambdaLinear, BetaSchedule::Constant { beta }) => {
                s_lambda_linear(t, lambda, beta, 0.0, 0.0)
            }
            (ScheduleKind::LambdaInverseOneMinusT, b) if t < clamp_free_limit(b) => {
                s_lambda_inverse(t, lambda)
            }
            (ScheduleKind::LambdaCosine, b) if t < clamp_free_limit(b) => {
                s_lambda_cosine(t, lambda)
            }
            _ => numeric(),
        };
        s.clamp(0.0, t)
    }
}

/// End of the region where β has not reached its clamp.
fn clamp_free_limit(beta: BetaSchedule) -> f64 {
    match beta {
        BetaSchedule::InverseOneMinusT { beta_max, .. } => 1.0 - 1.0 / beta_max,
        BetaSchedule::Cosine { beta_max, .. } => beta_max.atan() / FRAC_PI_2,
        _ => f64::INFINITY,
    }
}
