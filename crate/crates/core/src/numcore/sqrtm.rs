use nalgebra::SymmetricEigen;

use super::matrix::{asymmetry, ensure_finite, ensure_square, Matrix};
use crate::error::{Error, Result};

const ASYMMETRY_TOL: f64 = 1e-9;
const NEGATIVE_EIGEN_TOL: f64 = 1e-10;

/// Symmetric principal square root of a positive semi-definite matrix.
#[derive(Debug, Clone)]
pub struct SpdRoot {
    pub root: Matrix,
    /// Present only when every eigenvalue is strictly positive.
    pub inv_root: Option<Matrix>,
    pub eigenvalues: Vec<f64>,
}

/// Square root via symmetric eigendecomposition, `S = V diag(√λ) Vᵀ`.
pub fn sqrtm_spd(p: &Matrix) -> Result<SpdRoot> {
    sqrtm_spd_floored(p, 0.0)
}

/// Like [`sqrtm_spd`], raising eigenvalues below `floor` up to `floor`.
pub fn sqrtm_spd_floored(p: &Matrix, floor: f64) -> Result<SpdRoot> {
    ensure_square(p)?;
    ensure_finite(p, "sqrtm input")?;
    let scale = p.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let asym = asymmetry(p);
    if asym > ASYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let n = p.nrows();
    let is_diagonal = (0..n).all(|i| (0..n).all(|j| i == j || p[(i, j)] == 0.0));
    if is_diagonal {
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let v = p[(i, i)];
            if v < -NEGATIVE_EIGEN_TOL * scale {
                return Err(Error::NotPsd(v));
            }
            values.push(v.max(floor).max(0.0));
        }
        let roots: Vec<f64> = values.iter().map(|v| v.sqrt()).collect();
        let invertible = roots.iter().all(|&r| r > 0.0);
        let inv: Vec<f64> = roots.iter().map(|r| 1.0 / r).collect();
        return Ok(SpdRoot {
            root: super::matrix::diag(&roots),
            inv_root: invertible.then(|| super::matrix::diag(&inv)),
            eigenvalues: values,
        });
    }
    let eig = SymmetricEigen::new(p.clone());
    let mut values = Vec::with_capacity(n);
    for &lam in eig.eigenvalues.iter() {
        if lam < -NEGATIVE_EIGEN_TOL * scale {
            return Err(Error::NotPsd(lam));
        }
        values.push(lam.max(floor).max(0.0));
    }
    let vecs = &eig.eigenvectors;
    let mut root = Matrix::zeros(n, n);
    let mut inv = Matrix::zeros(n, n);
    let invertible = values.iter().all(|&v| v > 0.0);
    for (k, &lam) in values.iter().enumerate() {
        let col = vecs.column(k);
        let outer = &col * col.transpose();
        let r = lam.sqrt();
        root += &outer * r;
        if invertible {
            inv += &outer * (1.0 / r);
        }
    }
    Ok(SpdRoot {
        root,
        inv_root: invertible.then_some(inv),
        eigenvalues: values,
    })
}
