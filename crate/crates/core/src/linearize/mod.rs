//! Local linearization of the drift and the resulting Gaussian transition kernels.

mod transition;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use transition::GaussianTransition;

use crate::error::{Error, Result};
use crate::numcore::expm::{exp_upper_2x2, mat_exp};
use crate::numcore::matrix::{ensure_finite, matvec, symmetrize, Matrix};
use crate::numcore::quad::{integrate_vec, DEFAULT_QUAD_TOL};
use crate::numcore::rng::RngStream;
use crate::numcore::sde::{adaptive_sde_sample, AdaptiveSdeOptions};
use crate::processes::DiffusionProcess;
use crate::schedule::TimePairSchedule;

/// Which expansion point the drift is linearized about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaylorOperator {
    /// First order in `y` and `t` about `(y_s, s)`.
    #[serde(rename = "SS")]
    Ss,
    /// First order in `y` about `(y_s, t)`; diagonal drifts only.
    #[serde(rename = "ST")]
    St,
}

/// `f(y, t) ≈ c1 + c2·t + A·y`.
#[derive(Debug, Clone)]
pub struct SsCoeffs {
    pub y_s: Vec<f64>,
    pub s: f64,
    pub a: Matrix,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

impl SsCoeffs {
    pub fn eval(&self, y: &[f64], t: f64) -> Vec<f64> {
        let ay = matvec(&self.a, y);
        (0..y.len())
            .map(|i| self.c1[i] + self.c2[i] * t + ay[i])
            .collect()
    }
}

/// `f_i(y, t) ≈ c_i(t) + A_i(t)·y_i` with coefficients evaluated lazily.
#[derive(Clone, Copy)]
pub struct StCoeffs<'a> {
    pub process: &'a dyn DiffusionProcess,
    pub y_s: &'a [f64],
    pub s: f64,
}

impl<'a> StCoeffs<'a> {
    pub fn a_at(&self, t: f64, out: &mut [f64]) {
        self.process.drift_jacobian_diag(self.y_s, t, out);
    }

    pub fn c_at(&self, t: f64, out: &mut [f64]) {
        let d = self.y_s.len();
        let mut a = vec![0.0; d];
        self.a_at(t, &mut a);
        self.process.drift(self.y_s, t, out);
        for i in 0..d {
            out[i] -= a[i] * self.y_s[i];
        }
    }

    pub fn eval(&self, y: &[f64], t: f64) -> Vec<f64> {
        let d = y.len();
        let mut a = vec![0.0; d];
        let mut c = vec![0.0; d];
        self.a_at(t, &mut a);
        self.c_at(t, &mut c);
        (0..d).map(|i| c[i] + a[i] * y[i]).collect()
    }

    /// `(∫_s^t A_i, ∫_s^t c_i)` per coordinate.
    pub fn integrals(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.y_s.len();
        if let Some(beta) = self.process.drift_scale() {
            // With f = β(t)·h(y), both coefficients are β(t) times a constant.
            let ratio = beta.integral(self.s, t) / beta.beta(self.s);
            let mut a = vec![0.0; d];
            let mut c = vec![0.0; d];
            self.a_at(self.s, &mut a);
            self.c_at(self.s, &mut c);
            a.iter_mut().for_each(|v| *v *= ratio);
            c.iter_mut().for_each(|v| *v *= ratio);
            return Ok((a, c));
        }
        self.integrals_by_quadrature(t)
    }

    pub fn integrals_by_quadrature(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.y_s.len();
        let both = integrate_vec(
            |tau, out| {
                let (a, c) = out.split_at_mut(d);
                self.a_at(tau, a);
                self.c_at(tau, c);
            },
            2 * d,
            self.s,
            t,
            DEFAULT_QUAD_TOL,
        )?;
        let (a, c) = both.split_at(d);
        Ok((a.to_vec(), c.to_vec()))
    }
}

pub fn taylor_ss(process: &dyn DiffusionProcess, y_s: &[f64], s: f64) -> Result<SsCoeffs> {
    let d = process.dim();
    let a = process.drift_jacobian(y_s, s);
    ensure_finite(&a, "drift Jacobian")?;
    let f = process.drift_vec(y_s, s);
    let mut c2 = vec![0.0; d];
    process.drift_time_derivative(y_s, s, &mut c2);
    let ay = matvec(&a, y_s);
    let c1: Vec<f64> = (0..d).map(|i| f[i] - ay[i] - c2[i] * s).collect();
    if c1.iter().chain(&c2).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Taylor coefficients"));
    }
    Ok(SsCoeffs {
        y_s: y_s.to_vec(),
        s,
        a,
        c1,
        c2,
    })
}

pub fn taylor_st<'a>(
    process: &'a dyn DiffusionProcess,
    y_s: &'a [f64],
    s: f64,
) -> Result<StCoeffs<'a>> {
    if !process.is_diagonal_drift() {
        return Err(Error::Unsupported(
            "the (y_s, t) operator needs a coordinate-wise drift".into(),
        ));
    }
    Ok(StCoeffs { process, y_s, s })
}

/// Mean of the linearized kernel, from the exponential of the augmented
/// generator acting on `(m, τ, 1)`.
pub fn mean_ss(coeffs: &SsCoeffs, t: f64) -> Result<Vec<f64>> {
    let d = coeffs.y_s.len();
    let h = t - coeffs.s;
    let mut gen = Matrix::zeros(d + 2, d + 2);
    for i in 0..d {
        for j in 0..d {
            gen[(i, j)] = coeffs.a[(i, j)] * h;
        }
        gen[(i, d)] = coeffs.c2[i] * h;
        gen[(i, d + 1)] = coeffs.c1[i] * h;
    }
    gen[(d, d + 1)] = h;
    let e = mat_exp(&gen)?;
    let mut z = DVector::zeros(d + 2);
    for i in 0..d {
        z[i] = coeffs.y_s[i];
    }
    z[d] = coeffs.s;
    z[d + 1] = 1.0;
    let out = e * z;
    Ok(out.as_slice()[..d].to_vec())
}

/// Covariance `P = C H⁻¹` by matrix factorization.
///
/// `ggᵀ` is taken as affine in time over `[s, t]`, matching its integral and
/// first moment (3-point Gauss–Legendre). For constant `ggᵀ` the generator is
/// `[[A h, ∫ggᵀ], [0, −Aᵀ h]]`. Otherwise a third block carries the slope `K`:
/// `[[A h, K h², ∫ggᵀ − ½K h²], [0, −Aᵀ h, I], [0, 0, −Aᵀ h]]`.
pub fn cov_ss(coeffs: &SsCoeffs, process: &dyn DiffusionProcess, t: f64) -> Result<Matrix> {
    let d = coeffs.y_s.len();
    let h = t - coeffs.s;
    let g = process.diffusion_sq_integral_vec(coeffs.s, t);
    let node = 0.5 * h * (0.6f64).sqrt();
    let mid = coeffs.s + 0.5 * h;
    let hi = process.diffusion_sq_vec(mid + node);
    let lo = process.diffusion_sq_vec(mid - node);
    // K h² = 3h · (5/9)·√(3/5) · (g²(τ₊) − g²(τ₋)).
    let slope: Vec<f64> = hi
        .iter()
        .zip(&lo)
        .map(|(a, b)| 3.0 * h * (5.0 / 9.0) * (0.6f64).sqrt() * (a - b))
        .collect();
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let blocks = if slope.iter().all(|v| v.abs() <= 1e-14 * scale) { 2 } else { 3 };
    let n = blocks * d;
    let mut gen = Matrix::zeros(n, n);
    for i in 0..d {
        for j in 0..d {
            gen[(i, j)] = coeffs.a[(i, j)] * h;
            for b in 1..blocks {
                gen[(b * d + i, b * d + j)] = -coeffs.a[(j, i)] * h;
            }
        }
        if blocks == 2 {
            gen[(i, d + i)] = g[i];
        } else {
            gen[(i, d + i)] = slope[i];
            gen[(d + i, 2 * d + i)] = 1.0;
            gen[(i, 2 * d + i)] = g[i] - 0.5 * slope[i];
        }
    }
    let e = mat_exp(&gen)?;
    let last = (blocks - 1) * d;
    let c = e.view((0, last), (d, d)).into_owned();
    let hm = e.view((last, last), (d, d)).into_owned();
    // P = C H⁻¹  ⇔  Hᵀ Pᵀ = Cᵀ.
    let pt = hm
        .transpose()
        .lu()
        .solve(&c.transpose())
        .ok_or(Error::Singular("covariance factor H"))?;
    let p = symmetrize(&pt.transpose());
    ensure_finite(&p, "transition covariance")?;
    Ok(p)
}

/// Per-coordinate mean `m = D/R` from the 2×2 exponential with entries
/// `½∫A_i` and `∫c_i`.
pub fn mean_st(coeffs: &StCoeffs<'_>, t: f64) -> Result<Vec<f64>> {
    let (ia, ic) = coeffs.integrals(t)?;
    Ok(mean_st_from_integrals(coeffs.y_s, &ia, &ic))
}

fn mean_st_from_integrals(y_s: &[f64], ia: &[f64], ic: &[f64]) -> Vec<f64> {
    (0..y_s.len())
        .map(|i| {
            let (e11, e12, e22) = exp_upper_2x2(0.5 * ia[i], ic[i], -0.5 * ia[i]);
            (e11 * y_s[i] + e12) / e22
        })
        .collect()
}

/// Per-coordinate variance `P = C/H` from the 2×2 exponential with entries
/// `∫A_i` and `∫ggᵀ_ii`.
pub fn cov_st(coeffs: &StCoeffs<'_>, t: f64) -> Result<Vec<f64>> {
    let (ia, _) = coeffs.integrals(t)?;
    Ok(cov_st_from_integrals(coeffs, &ia, t))
}

fn cov_st_from_integrals(coeffs: &StCoeffs<'_>, ia: &[f64], t: f64) -> Vec<f64> {
    let g = coeffs.process.diffusion_sq_integral_vec(coeffs.s, t);
    (0..ia.len())
        .map(|i| {
            let (_, e12, e22) = exp_upper_2x2(ia[i], g[i], -ia[i]);
            e12 / e22
        })
        .collect()
}

/// Gaussian kernel of the process linearized at `(y_s, s)`, on `[s, t]`.
pub fn transition(
    process: &dyn DiffusionProcess,
    op: TaylorOperator,
    y_s: &[f64],
    s: f64,
    t: f64,
) -> Result<GaussianTransition> {
    if !(t > s) {
        return Err(Error::InvalidInterval { t0: s, t1: t });
    }
    match op {
        TaylorOperator::Ss => {
            let c = taylor_ss(process, y_s, s)?;
            let m = mean_ss(&c, t)?;
            let p = cov_ss(&c, process, t)?;
            GaussianTransition::new(m, p, s, t)
        }
        TaylorOperator::St => {
            let c = taylor_st(process, y_s, s)?;
            let (ia, ic) = c.integrals(t)?;
            let m = mean_st_from_integrals(y_s, &ia, &ic);
            let p = cov_st_from_integrals(&c, &ia, t);
            GaussianTransition::new(m, crate::numcore::matrix::diag(&p), s, t)
        }
    }
}

/// One draw of the local-DSM training pair.
#[derive(Debug, Clone)]
pub struct LocalSample {
    pub s: f64,
    pub t: f64,
    pub y_s: Vec<f64>,
    pub y_t: Vec<f64>,
    pub eps: Vec<f64>,
    /// `∇ log q̂(y_t | y_s) = −σ⁻¹ε`.
    pub score: Vec<f64>,
    pub kernel: GaussianTransition,
}

/// `(Φ, c)` with `m_{t|s} = Φ·y_s + c` for the kernel linearized at `(y_s, s)`.
pub fn affine_map(
    process: &dyn DiffusionProcess,
    op: TaylorOperator,
    y_s: &[f64],
    s: f64,
    t: f64,
) -> Result<(Matrix, Vec<f64>)> {
    if !(t > s) {
        return Err(Error::InvalidInterval { t0: s, t1: t });
    }
    let (phi, m) = match op {
        TaylorOperator::Ss => {
            let c = taylor_ss(process, y_s, s)?;
            let phi = mat_exp(&(&c.a * (t - s)))?;
            (phi, mean_ss(&c, t)?)
        }
        TaylorOperator::St => {
            let c = taylor_st(process, y_s, s)?;
            let (ia, ic) = c.integrals(t)?;
            let e: Vec<f64> = ia.iter().map(|v| v.exp()).collect();
            (crate::numcore::matrix::diag(&e), mean_st_from_integrals(y_s, &ia, &ic))
        }
    };
    let py = matvec(&phi, y_s);
    let c = m.iter().zip(py).map(|(a, b)| a - b).collect();
    Ok((phi, c))
}

/// Draws `y_t` given `y_0 = x`: exactly through the ST kernel when the drift
/// is `β(t)` times a coordinate-wise affine map, and by the adaptive SDE
/// solver otherwise.
pub fn forward_sample(
    process: &dyn DiffusionProcess,
    x: &[f64],
    t: f64,
    sde: &AdaptiveSdeOptions,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if t > 0.0
        && process.is_linear_drift()
        && process.is_diagonal_drift()
        && process.drift_scale().is_some()
    {
        Ok(transition(process, TaylorOperator::St, x, 0.0, t)?.sample(rng).0)
    } else {
        adaptive_sde_sample(process, x, 0.0, t, sde, rng)
    }
}

/// Samples `y_s` from `x` on `[0, s]`, linearizes at `(y_s, s)`, and draws
/// `y_t` from the resulting Gaussian kernel together with its score.
pub fn local_sample(
    process: &dyn DiffusionProcess,
    op: TaylorOperator,
    x: &[f64],
    s: f64,
    t: f64,
    sde: &AdaptiveSdeOptions,
    rng: &mut RngStream,
) -> Result<LocalSample> {
    let y_s = if s > 0.0 {
        forward_sample(process, x, s, sde, rng)?
    } else {
        x.to_vec()
    };
    let kernel = transition(process, op, &y_s, s, t)?;
    let (y_t, eps) = kernel.sample(rng);
    let score = kernel.score(&eps)?;
    Ok(LocalSample {
        s,
        t,
        y_s,
        y_t,
        eps,
        score,
        kernel,
    })
}

/// [`local_sample`] with `s = schedule.s(t)`.
pub fn algorithm1(
    process: &dyn DiffusionProcess,
    schedule: &TimePairSchedule,
    op: TaylorOperator,
    x: &[f64],
    t: f64,
    sde: &AdaptiveSdeOptions,
    rng: &mut RngStream,
) -> Result<LocalSample> {
    local_sample(process, op, x, schedule.s(t), t, sde, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::{ActiveSwimmer, BetaSchedule, Langevin, Prior, VpSde};

    #[test]
    fn ss_on_swimmer_matches_hand_values() {
        let p = ActiveSwimmer::new(0.1, 1.0).unwrap();
        let c = taylor_ss(&p, &[1.0, 0.0], 0.7).unwrap();
        assert_eq!(c.a, Matrix::from_row_slice(2, 2, &[-3.0, 1.0, 0.0, -0.1]));
        assert_eq!(c.c2, vec![0.0, 0.0]);
        assert_eq!(c.c1, vec![2.0, 0.0]);
    }

    #[test]
    fn expansion_point_reproduces_drift() {
        let p = Langevin::new(
            2,
            Prior::Mog {
                mu1: -1.0,
                mu2: 1.0,
                var: 0.5,
            },
            BetaSchedule::linear(0.1, 10.0),
        )
        .unwrap();
        let y = [0.3, -1.4];
        let c = taylor_ss(&p, &y, 0.4).unwrap();
        let f = p.drift_vec(&y, 0.4);
        for (a, b) in c.eval(&y, 0.4).iter().zip(&f) {
            assert!((a - b).abs() < 1e-12);
        }
        let st = taylor_st(&p, &y, 0.4).unwrap();
        for &t in &[0.4, 0.5, 0.9] {
            let f = p.drift_vec(&y, t);
            for (a, b) in st.eval(&y, t).iter().zip(&f) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pure_drift_mean() {
        let c = SsCoeffs {
            y_s: vec![1.0, 2.0],
            s: 0.2,
            a: Matrix::zeros(2, 2),
            c1: vec![0.5, -1.0],
            c2: vec![0.0, 0.0],
        };
        let m = mean_ss(&c, 0.7).unwrap();
        assert!((m[0] - 1.25).abs() < 1e-14 && (m[1] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn time_linear_forcing_mean() {
        // dm/dt = −m + t from m(0) = 0 gives m(1) = e⁻¹.
        let c = SsCoeffs {
            y_s: vec![0.0],
            s: 0.0,
            a: Matrix::from_element(1, 1, -1.0),
            c1: vec![0.0],
            c2: vec![1.0],
        };
        let m = mean_ss(&c, 1.0).unwrap();
        assert!((m[0] - (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn st_rejects_coupled_drift() {
        let p = ActiveSwimmer::new(0.1, 1.0).unwrap();
        assert!(matches!(
            taylor_st(&p, &[0.0, 0.0], 0.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn st_fast_path_matches_quadrature() {
        let p = Langevin::new(2, Prior::Logistic, BetaSchedule::linear(0.1, 10.0)).unwrap();
        let y = [0.8, -2.0];
        let c = taylor_st(&p, &y, 0.3).unwrap();
        let (a1, c1) = c.integrals(0.45).unwrap();
        let (a2, c2) = c.integrals_by_quadrature(0.45).unwrap();
        for i in 0..2 {
            assert!((a1[i] - a2[i]).abs() < 1e-12);
            assert!((c1[i] - c2[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn vpsde_constant_beta_spec_values() {
        let p = VpSde::with_schedule(1, BetaSchedule::Constant { beta: 2.0 }).unwrap();
        for op in [TaylorOperator::Ss, TaylorOperator::St] {
            let k = transition(&p, op, &[1.0], 0.3, 0.8).unwrap();
            assert!((k.mean[0] - 0.606_530_659_712_633_4).abs() < 1e-12);
            assert!((k.cov[(0, 0)] - 0.632_120_558_828_557_7).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_map_reproduces_mean() {
        let p = Langevin::new(
            2,
            Prior::Mog {
                mu1: -1.0,
                mu2: 1.0,
                var: 0.5,
            },
            BetaSchedule::linear(0.1, 10.0),
        )
        .unwrap();
        let y = [0.4, -1.3];
        for op in [TaylorOperator::Ss, TaylorOperator::St] {
            let (phi, c) = affine_map(&p, op, &y, 0.3, 0.32).unwrap();
            let k = transition(&p, op, &y, 0.3, 0.32).unwrap();
            let m = matvec(&phi, &y);
            for i in 0..2 {
                assert!((m[i] + c[i] - k.mean[i]).abs() < 1e-12);
            }
        }
    }
}
