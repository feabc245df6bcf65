use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default clamp for schedules that diverge at `t = 1`.
pub const DEFAULT_BETA_MAX: f64 = 1e3;

/// Scalar rate β(t) used to scale drifts and diffusions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSchedule {
    Constant { beta: f64 },
    /// `β(t) = beta0 + (beta1 − beta0)·t`.
    Linear { beta0: f64, beta1: f64 },
    /// `β(t) = offset + 1/(1 − t)`, clamped at `beta_max`.
    InverseOneMinusT { offset: f64, beta_max: f64 },
    /// `β(t) = offset + tan(πt/2)`, clamped at `beta_max`.
    Cosine { offset: f64, beta_max: f64 },
}

impl BetaSchedule {
    pub fn linear(beta0: f64, beta1: f64) -> Self {
        Self::Linear { beta0, beta1 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Constant { beta } => beta > 0.0 && beta.is_finite(),
            Self::Linear { beta0, beta1 } => {
                beta0 > 0.0 && beta1 >= beta0 && beta1.is_finite()
            }
            Self::InverseOneMinusT { offset, beta_max } | Self::Cosine { offset, beta_max } => {
                offset >= 0.0 && beta_max > 1.0 && beta_max.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("beta schedule {self:?}")))
        }
    }

    /// Time after which the clamp is active.
    fn clamp_time(&self) -> f64 {
        match *self {
            Self::InverseOneMinusT { beta_max, .. } => 1.0 - 1.0 / beta_max,
            Self::Cosine { beta_max, .. } => beta_max.atan() / FRAC_PI_2,
            _ => f64::INFINITY,
        }
    }

    pub fn beta(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { beta } => beta,
            Self::Linear { beta0, beta1 } => beta0 + (beta1 - beta0) * t,
            Self::InverseOneMinusT { offset, beta_max } => {
                if t >= self.clamp_time() {
                    offset + beta_max
                } else {
                    offset + 1.0 / (1.0 - t)
                }
            }
            Self::Cosine { offset, beta_max } => {
                if t >= self.clamp_time() {
                    offset + beta_max
                } else {
                    offset + (FRAC_PI_2 * t).tan()
                }
            }
        }
    }

    pub fn beta_derivative(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { .. } => 0.0,
            Self::Linear { beta0, beta1 } => beta1 - beta0,
            Self::InverseOneMinusT { .. } => {
                if t >= self.clamp_time() {
                    0.0
                } else {
                    (1.0 - t).powi(-2)
                }
            }
            Self::Cosine { .. } => {
                if t >= self.clamp_time() {
                    0.0
                } else {
                    FRAC_PI_2 / (FRAC_PI_2 * t).cos().powi(2)
                }
            }
        }
    }

    /// Antiderivative with `B(0) = 0`.
    fn antiderivative(&self, t: f64) -> f64 {
        match *self {
            Self::Constant { beta } => beta * t,
            Self::Linear { beta0, beta1 } => beta0 * t + 0.5 * (beta1 - beta0) * t * t,
            Self::InverseOneMinusT { offset, beta_max } => {
                let tc = self.clamp_time();
                let u = t.min(tc);
                offset * t - (1.0 - u).ln() + beta_max * (t - tc).max(0.0)
            }
            Self::Cosine { offset, beta_max } => {
                let tc = self.clamp_time();
                let u = t.min(tc);
                offset * t - (FRAC_PI_2 * u).cos().ln() / FRAC_PI_2 + beta_max * (t - tc).max(0.0)
            }
        }
    }

    /// `∫_s^t β(τ) dτ`.
    pub fn integral(&self, s: f64, t: f64) -> f64 {
        if let Self::Linear { beta0, beta1 } = *self {
            // Factored form keeps precision for short intervals.
            return (t - s) * (beta0 + 0.5 * (beta1 - beta0) * (t + s));
        }
        if let Self::Constant { beta } = *self {
            return beta * (t - s);
        }
        self.antiderivative(t) - self.antiderivative(s)
    }
}
