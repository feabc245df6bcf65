use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numcore::matrix::{ensure_finite, matvec, symmetrize, Matrix};
use crate::numcore::rng::RngStream;
use crate::numcore::sqrtm::sqrtm_spd_floored;

/// Relative eigenvalue floor applied before taking the square root.
pub const COV_FLOOR: f64 = 1e-12;

/// `N(mean, cov)` on the interval `[s, t]` with its symmetric square root.
#[derive(Debug, Clone)]
pub struct GaussianTransition {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    pub root: Matrix,
    pub inv_root: Option<Matrix>,
    /// Eigenvalues of the floored covariance.
    pub eigenvalues: Vec<f64>,
    pub s: f64,
    pub t: f64,
}

impl GaussianTransition {
    pub fn new(mean: Vec<f64>, cov: Matrix, s: f64, t: f64) -> Result<Self> {
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("transition mean"));
        }
        ensure_finite(&cov, "transition covariance")?;
        let cov = symmetrize(&cov);
        let floor = COV_FLOOR * cov.trace().max(0.0);
        let r = sqrtm_spd_floored(&cov, floor)?;
        Ok(Self {
            mean,
            cov,
            root: r.root,
            inv_root: r.inv_root,
            eigenvalues: r.eigenvalues,
            s,
            t,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `m + σε` for a given `ε`.
    pub fn apply(&self, eps: &[f64]) -> Vec<f64> {
        let se = matvec(&self.root, eps);
        self.mean.iter().zip(se).map(|(m, v)| m + v).collect()
    }

    pub fn sample(&self, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
        let eps = rng.normals(self.dim());
        (self.apply(&eps), eps)
    }

    /// `−σ⁻¹ε`, the score of the kernel at `m + σε`.
    pub fn score(&self, eps: &[f64]) -> Result<Vec<f64>> {
        let inv = self
            .inv_root
            .as_ref()
            .ok_or(Error::Singular("transition covariance"))?;
        Ok(matvec(inv, eps).into_iter().map(|v| -v).collect())
    }

    /// `−P⁻¹(y − m)`.
    pub fn score_at(&self, y: &[f64]) -> Result<Vec<f64>> {
        let inv = self
            .inv_root
            .as_ref()
            .ok_or(Error::Singular("transition covariance"))?;
        let diff: Vec<f64> = y.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let z = matvec(inv, &diff);
        Ok(matvec(inv, &z).into_iter().map(|v| -v).collect())
    }

    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        let inv = self
            .inv_root
            .as_ref()
            .ok_or(Error::Singular("transition covariance"))?;
        let diff: Vec<f64> = y.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let z = matvec(inv, &diff);
        let quad: f64 = z.iter().map(|v| v * v).sum();
        Ok(-0.5 * quad - 0.5 * self.log_det_2pi())
    }

    /// `log det(2πP)`.
    pub fn log_det_2pi(&self) -> f64 {
        let logdet: f64 = self.eigenvalues.iter().map(|v| v.ln()).sum();
        self.dim() as f64 * (2.0 * PI).ln() + logdet
    }

    /// Differential entropy `½ log det(2πeP)`.
    pub fn entropy(&self) -> f64 {
        0.5 * (self.log_det_2pi() + self.dim() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::matrix::diag;

    #[test]
    fn zero_covariance_is_deterministic() {
        let k = GaussianTransition::new(vec![1.0, 2.0], Matrix::zeros(2, 2), 0.0, 1.0).unwrap();
        let (y, _) = k.sample(&mut RngStream::new(0, 0));
        assert_eq!(y, vec![1.0, 2.0]);
        assert!(k.score(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn scalar_score() {
        let k = GaussianTransition::new(vec![0.0], diag(&[4.0]), 0.0, 1.0).unwrap();
        assert_eq!(k.score(&[0.5]).unwrap(), vec![-0.25]);
        assert_eq!(k.score(&[0.0]).unwrap(), vec![-0.0]);
    }

    #[test]
    fn score_matches_gradient_of_log_density() {
        let cov = Matrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let k = GaussianTransition::new(vec![0.3, -0.2], cov, 0.0, 1.0).unwrap();
        let eps = [0.7, -1.1];
        let y = k.apply(&eps);
        let s = k.score(&eps).unwrap();
        let h = 1e-5;
        for i in 0..2 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += h;
            ym[i] -= h;
            let fd = (k.log_density(&yp).unwrap() - k.log_density(&ym).unwrap()) / (2.0 * h);
            assert!((fd - s[i]).abs() < 1e-5);
        }
        let s2 = k.score_at(&y).unwrap();
        assert!((s[0] - s2[0]).abs() < 1e-12 && (s[1] - s2[1]).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_standard_normal() {
        let k = GaussianTransition::new(vec![0.0], diag(&[1.0]), 0.0, 1.0).unwrap();
        assert!((k.entropy() - 0.5 * (2.0 * PI * std::f64::consts::E).ln()).abs() < 1e-14);
    }
}
