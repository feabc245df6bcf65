use super::{BetaSchedule, DiffusionProcess};
use crate::error::{Error, Result};
use crate::numcore::matrix::Matrix;

/// Active swimmer: `dx = (−x³ + v) dt`, `dv = −γv dt + √(2γD) dw`.
#[derive(Debug, Clone)]
pub struct ActiveSwimmer {
    gamma: f64,
    diffusivity: f64,
}

impl ActiveSwimmer {
    pub fn new(gamma: f64, diffusivity: f64) -> Result<Self> {
        if !(gamma > 0.0 && diffusivity > 0.0 && gamma.is_finite() && diffusivity.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "active swimmer needs gamma > 0 and D > 0, got ({gamma}, {diffusivity})"
            )));
        }
        Ok(Self { gamma, diffusivity })
    }

    fn noise(&self) -> f64 {
        2.0 * self.gamma * self.diffusivity
    }
}

impl DiffusionProcess for ActiveSwimmer {
    fn dim(&self) -> usize {
        2
    }

    fn drift(&self, y: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = -y[0] * y[0] * y[0] + y[1];
        out[1] = -self.gamma * y[1];
    }

    fn drift_jacobian(&self, y: &[f64], _t: f64) -> Matrix {
        Matrix::from_row_slice(2, 2, &[-3.0 * y[0] * y[0], 1.0, 0.0, -self.gamma])
    }

    fn drift_time_derivative(&self, _y: &[f64], _t: f64, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn drift_divergence(&self, y: &[f64], _t: f64) -> f64 {
        -3.0 * y[0] * y[0] - self.gamma
    }

    fn drift_jacobian_diag(&self, y: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = -3.0 * y[0] * y[0];
        out[1] = -self.gamma;
    }

    fn diffusion_sq(&self, _t: f64, out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = self.noise();
    }

    fn noise_rate(&self) -> (BetaSchedule, f64) {
        (BetaSchedule::Constant { beta: self.noise() }, 1.0)
    }

    fn diffusion_sq_integral(&self, s: f64, t: f64, out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = self.noise() * (t - s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_values() {
        let p = ActiveSwimmer::new(0.1, 1.0).unwrap();
        assert!((p.drift_divergence(&[1.0, 0.0], 0.0) + 3.1).abs() < 1e-15);
        assert_eq!(p.drift_vec(&[0.0, 0.0], 0.0), vec![0.0, 0.0]);
        assert_eq!(p.diffusion_sq_vec(0.0), vec![0.0, 0.2]);
    }

    #[test]
    fn drift_is_odd() {
        let p = ActiveSwimmer::new(0.1, 1.0).unwrap();
        for &(x, v) in &[(0.3, -1.2), (2.5, 0.7), (-1.1, 4.0)] {
            let a = p.drift_vec(&[x, v], 0.0);
            let b = p.drift_vec(&[-x, -v], 0.0);
            assert_eq!(a[0], -b[0]);
            assert_eq!(a[1], -b[1]);
        }
    }
}
