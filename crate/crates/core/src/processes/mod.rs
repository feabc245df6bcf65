//! Diffusion processes, priors, and data distributions.

mod beta;
mod dataset;
mod ips;
mod langevin;
mod prior;
mod swimmer;
mod vpsde;

use serde::{Deserialize, Serialize};

pub use beta::{BetaSchedule, DEFAULT_BETA_MAX};
pub use dataset::Dataset;
pub use ips::{Ips, IpsParams, RepulsionConvention};
pub use langevin::Langevin;
pub use prior::Prior;
pub use swimmer::ActiveSwimmer;
pub use vpsde::VpSde;

use crate::error::Result;
use crate::numcore::matrix::Matrix;

/// An Itô SDE `dy = f(y, t) dt + g(t) dw` with diagonal `g gᵀ`.
pub trait DiffusionProcess: Send + Sync {
    fn dim(&self) -> usize;

    fn drift(&self, y: &[f64], t: f64, out: &mut [f64]);

    /// `∇_y f(y, t)`, row `i` holding `∂f_i/∂y_j`.
    fn drift_jacobian(&self, y: &[f64], t: f64) -> Matrix;

    fn drift_time_derivative(&self, y: &[f64], t: f64, out: &mut [f64]);

    fn drift_divergence(&self, y: &[f64], t: f64) -> f64 {
        self.drift_jacobian(y, t).trace()
    }

    /// `∂f_i/∂y_i` for every `i`.
    fn drift_jacobian_diag(&self, y: &[f64], t: f64, out: &mut [f64]) {
        let j = self.drift_jacobian(y, t);
        for (i, o) in out.iter_mut().enumerate() {
            *o = j[(i, i)];
        }
    }

    /// Diagonal of `g gᵀ(t)`.
    fn diffusion_sq(&self, t: f64, out: &mut [f64]);

    /// Diagonal of `∫_s^t g gᵀ(τ) dτ`.
    fn diffusion_sq_integral(&self, s: f64, t: f64, out: &mut [f64]);

    /// `(β, k)` with `max_i [g gᵀ(t)]_ii = k·β(t)`.
    fn noise_rate(&self) -> (BetaSchedule, f64);

    /// True when `f_i` depends on `y` only through `y_i`.
    fn is_diagonal_drift(&self) -> bool {
        false
    }

    /// True when the drift is affine in `y`.
    fn is_linear_drift(&self) -> bool {
        false
    }

    /// The scalar factor β when the drift has the form `β(t)·h(y)`.
    fn drift_scale(&self) -> Option<BetaSchedule> {
        None
    }

    fn drift_vec(&self, y: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.drift(y, t, &mut out);
        out
    }

    fn diffusion_sq_vec(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.diffusion_sq(t, &mut out);
        out
    }

    fn diffusion_sq_integral_vec(&self, s: f64, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.diffusion_sq_integral(s, t, &mut out);
        out
    }
}

/// Serializable description of a built-in process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessSpec {
    Vpsde {
        dim: usize,
        beta: BetaSchedule,
    },
    Langevin {
        dim: usize,
        prior: Prior,
        beta: BetaSchedule,
    },
    ActiveSwimmer {
        gamma: f64,
        diffusivity: f64,
    },
    Ips(IpsParams),
}

impl ProcessSpec {
    pub fn build(&self) -> Result<Box<dyn DiffusionProcess>> {
        Ok(match self {
            Self::Vpsde { dim, beta } => Box::new(VpSde::with_schedule(*dim, *beta)?),
            Self::Langevin { dim, prior, beta } => Box::new(Langevin::new(*dim, *prior, *beta)?),
            Self::ActiveSwimmer { gamma, diffusivity } => {
                Box::new(ActiveSwimmer::new(*gamma, *diffusivity)?)
            }
            Self::Ips(p) => Box::new(Ips::new(p.clone())?),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Vpsde { dim, .. } | Self::Langevin { dim, .. } => *dim,
            Self::ActiveSwimmer { .. } => 2,
            Self::Ips(p) => 2 * p.n,
        }
    }
}
