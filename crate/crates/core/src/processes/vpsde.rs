use super::{BetaSchedule, DiffusionProcess};
use crate::error::{Error, Result};
use crate::numcore::matrix::Matrix;

/// Variance-preserving SDE: `dy = −½β(t) y dt + √β(t) dw`.
#[derive(Debug, Clone)]
pub struct VpSde {
    dim: usize,
    beta: BetaSchedule,
}

impl VpSde {
    /// Linear schedule `β(t) = beta0 + t·(beta1 − beta0)`.
    pub fn new(dim: usize, beta0: f64, beta1: f64) -> Result<Self> {
        if !(beta0 > 0.0 && beta0 <= beta1 && beta1.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "vpsde needs 0 < beta0 <= beta1, got ({beta0}, {beta1})"
            )));
        }
        Self::with_schedule(dim, BetaSchedule::linear(beta0, beta1))
    }

    pub fn with_schedule(dim: usize, beta: BetaSchedule) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        beta.validate()?;
        Ok(Self { dim, beta })
    }

    pub fn schedule(&self) -> BetaSchedule {
        self.beta
    }
}

impl DiffusionProcess for VpSde {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, y: &[f64], t: f64, out: &mut [f64]) {
        let k = -0.5 * self.beta.beta(t);
        for (o, &v) in out.iter_mut().zip(y) {
            *o = k * v;
        }
    }

    fn drift_jacobian(&self, _y: &[f64], t: f64) -> Matrix {
        Matrix::identity(self.dim, self.dim) * (-0.5 * self.beta.beta(t))
    }

    fn drift_time_derivative(&self, y: &[f64], t: f64, out: &mut [f64]) {
        let k = -0.5 * self.beta.beta_derivative(t);
        for (o, &v) in out.iter_mut().zip(y) {
            *o = k * v;
        }
    }

    fn drift_divergence(&self, _y: &[f64], t: f64) -> f64 {
        -0.5 * self.dim as f64 * self.beta.beta(t)
    }

    fn drift_jacobian_diag(&self, _y: &[f64], t: f64, out: &mut [f64]) {
        out.fill(-0.5 * self.beta.beta(t));
    }

    fn diffusion_sq(&self, t: f64, out: &mut [f64]) {
        out.fill(self.beta.beta(t));
    }

    fn noise_rate(&self) -> (BetaSchedule, f64) {
        (self.beta, 1.0)
    }

    fn diffusion_sq_integral(&self, s: f64, t: f64, out: &mut [f64]) {
        out.fill(self.beta.integral(s, t));
    }

    fn is_diagonal_drift(&self) -> bool {
        true
    }

    fn is_linear_drift(&self) -> bool {
        true
    }

    fn drift_scale(&self) -> Option<BetaSchedule> {
        Some(self.beta)
    }
}
