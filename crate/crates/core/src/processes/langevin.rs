use super::{BetaSchedule, DiffusionProcess, Prior};
use crate::error::{Error, Result};
use crate::numcore::matrix::Matrix;

/// Langevin diffusion `dy = β(t)∇log π(y) dt + √(2β(t)) dw` with a product prior π.
#[derive(Debug, Clone)]
pub struct Langevin {
    dim: usize,
    prior: Prior,
    beta: BetaSchedule,
}

impl Langevin {
    pub fn new(dim: usize, prior: Prior, beta: BetaSchedule) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        beta.validate()?;
        Ok(Self { dim, prior, beta })
    }

    pub fn prior(&self) -> Prior {
        self.prior
    }

    pub fn schedule(&self) -> BetaSchedule {
        self.beta
    }
}

impl DiffusionProcess for Langevin {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, y: &[f64], t: f64, out: &mut [f64]) {
        let b = self.beta.beta(t);
        for (o, &x) in out.iter_mut().zip(y) {
            *o = b * self.prior.score_1d(x);
        }
    }

    fn drift_jacobian(&self, y: &[f64], t: f64) -> Matrix {
        let mut d = vec![0.0; self.dim];
        self.drift_jacobian_diag(y, t, &mut d);
        crate::numcore::matrix::diag(&d)
    }

    fn drift_time_derivative(&self, y: &[f64], t: f64, out: &mut [f64]) {
        let db = self.beta.beta_derivative(t);
        for (o, &x) in out.iter_mut().zip(y) {
            *o = db * self.prior.score_1d(x);
        }
    }

    fn drift_divergence(&self, y: &[f64], t: f64) -> f64 {
        let b = self.beta.beta(t);
        y.iter().map(|&x| b * self.prior.score_derivative_1d(x)).sum()
    }

    fn drift_jacobian_diag(&self, y: &[f64], t: f64, out: &mut [f64]) {
        let b = self.beta.beta(t);
        for (o, &x) in out.iter_mut().zip(y) {
            *o = b * self.prior.score_derivative_1d(x);
        }
    }

    fn diffusion_sq(&self, t: f64, out: &mut [f64]) {
        out.fill(2.0 * self.beta.beta(t));
    }

    fn noise_rate(&self) -> (BetaSchedule, f64) {
        (self.beta, 2.0)
    }

    fn diffusion_sq_integral(&self, s: f64, t: f64, out: &mut [f64]) {
        out.fill(2.0 * self.beta.integral(s, t));
    }

    fn is_diagonal_drift(&self) -> bool {
        true
    }

    fn is_linear_drift(&self) -> bool {
        matches!(self.prior, Prior::Gaussian { .. })
    }

    fn drift_scale(&self) -> Option<BetaSchedule> {
        Some(self.beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_priors_have_zero_drift_at_origin() {
        let beta = BetaSchedule::linear(0.1, 10.0);
        for prior in [
            Prior::Mog {
                mu1: -1.0,
                mu2: 1.0,
                var: 0.5,
            },
            Prior::Logistic,
        ] {
            let p = Langevin::new(1, prior, beta).unwrap();
            assert_eq!(p.drift_vec(&[0.0], 0.3), vec![0.0]);
        }
    }

    #[test]
    fn standard_gaussian_is_ou() {
        let p = Langevin::new(2, Prior::standard_normal(), BetaSchedule::Constant { beta: 1.0 })
            .unwrap();
        assert_eq!(p.drift_vec(&[0.7, -2.0], 0.5), vec![-0.7, 2.0]);
        assert_eq!(p.diffusion_sq_vec(0.5), vec![2.0, 2.0]);
    }
}
