//! Sample-quality metrics and linearization diagnostics.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearize::{forward_sample, taylor_ss, taylor_st, transition, TaylorOperator};
use crate::numcore::matrix::Matrix;
use crate::numcore::ode::ode_solve;
use crate::numcore::rng::RngStream;
use crate::numcore::sde::{euler_maruyama, AdaptiveSdeOptions};
use crate::objectives::mean_stderr;
use crate::processes::DiffusionProcess;
use crate::schedule::TimePairSchedule;

const TAG_DIAG: u64 = 0x6469_6167;
const TAG_KL: u64 = 0x6b6c_626e;

/// One metric value with its standard error and free-form metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub name: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub step: u64,
    /// Wall-clock seconds since the start of the run; `None` in
    /// deterministic outputs.
    pub wall_seconds: Option<f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl MetricRecord {
    pub fn new(name: impl Into<String>, value: f64, stderr: Option<f64>) -> Self {
        Self {
            name: name.into(),
            value,
            stderr,
            step: 0,
            wall_seconds: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn at_step(mut self, step: u64) -> Self {
        self.step = step;
        self
    }
}

fn sq_dist(x: &Array2<f64>, i: usize, y: &Array2<f64>, j: usize) -> f64 {
    x.row(i)
        .iter()
        .zip(y.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Median pairwise distance over the pooled samples.
pub fn median_bandwidth(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let pooled = ndarray::concatenate(ndarray::Axis(0), &[x.view(), y.view()]).unwrap();
    let n = pooled.nrows();
    // Deterministic subsample keeps this O(n) for large sets.
    let stride = (n / 1000).max(1);
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let mut d = Vec::with_capacity(idx.len() * idx.len() / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            d.push(sq_dist(&pooled, i, &pooled, j).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Unbiased MMD² with kernel `exp(−‖x − y‖²/(2h²))`.
///
/// The bandwidth `h` defaults to the median heuristic. With equal sample
/// sizes the standard error comes from the per-index U-statistic terms.
pub fn mmd_rbf(x: &Array2<f64>, y: &Array2<f64>, bandwidth: Option<f64>) -> Result<MetricRecord> {
    let (m, n) = (x.nrows(), y.nrows());
    if m < 2 || n < 2 || x.ncols() != y.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "MMD needs two samples of ≥ 2 rows with equal width, got {:?} and {:?}",
            x.dim(),
            y.dim()
        )));
    }
    let h = bandwidth.unwrap_or_else(|| median_bandwidth(x, y));
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("MMD bandwidth {h}")));
    }
    let inv = 1.0 / (2.0 * h * h);
    let k = |a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize| (-sq_dist(a, i, b, j) * inv).exp();
    let row_sums = |a: &Array2<f64>, b: &Array2<f64>, same: bool| -> Vec<f64> {
        (0..a.nrows())
            .into_par_iter()
            .map(|i| {
                (0..b.nrows())
                    .filter(|&j| !same || j != i)
                    .map(|j| k(a, i, b, j))
                    .sum()
            })
            .collect()
    };
    let kxx = row_sums(x, x, true);
    let kyy = row_sums(y, y, true);
    let kxy = row_sums(x, y, false);
    let sxx: f64 = kxx.iter().sum::<f64>() / (m * (m - 1)) as f64;
    let syy: f64 = kyy.iter().sum::<f64>() / (n * (n - 1)) as f64;
    let sxy: f64 = kxy.iter().sum::<f64>() / (m * n) as f64;
    let value = sxx + syy - 2.0 * sxy;
    let stderr = if m == n {
        let kyx = row_sums(y, x, false);
        let contrib: Vec<f64> = (0..m)
            .map(|i| {
                kxx[i] / (m - 1) as f64 + kyy[i] / (n - 1) as f64 - kxy[i] / n as f64
                    - kyx[i] / m as f64
            })
            .collect();
        let (_, se) = mean_stderr(&contrib);
        Some(2.0 * se)
    } else {
        None
    };
    Ok(MetricRecord::new("mmd2", value, stderr).with_meta("bandwidth", h))
}

/// Bits per dimension for an ELBO in nats.
pub fn bpd(elbo_nats: f64, dim: usize) -> f64 {
    -elbo_nats / (dim as f64 * LN_2)
}

/// Linearized moments against the moment ODE
/// `dm/dt = f(m, t)`, `dP/dt = J(m, t)P + PJ(m, t)ᵀ + ggᵀ(t)` started at
/// `(y_s, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentError {
    pub mean: f64,
    pub cov: f64,
}

pub fn moment_error(
    process: &dyn DiffusionProcess,
    op: TaylorOperator,
    y_s: &[f64],
    s: f64,
    t: f64,
    tol: f64,
) -> Result<MomentError> {
    let d = y_s.len();
    let k = transition(process, op, y_s, s, t)?;
    let mut z0 = y_s.to_vec();
    z0.extend(std::iter::repeat(0.0).take(d * d));
    let mut f = vec![0.0; d];
    let mut gg = vec![0.0; d];
    let oracle = ode_solve(
        |tau, z, out| {
            let (m, p) = z.split_at(d);
            process.drift(m, tau, &mut f);
            out[..d].copy_from_slice(&f);
            let jac = process.drift_jacobian(m, tau);
            let pm = Matrix::from_row_slice(d, d, p);
            let dp = &jac * &pm + &pm * jac.transpose();
            process.diffusion_sq(tau, &mut gg);
            for i in 0..d {
                for j in 0..d {
                    out[d + i * d + j] = dp[(i, j)] + if i == j { gg[i] } else { 0.0 };
                }
            }
        },
        &z0,
        s,
        t,
        tol,
    )?;
    let mean = (0..d)
        .map(|i| (k.mean[i] - oracle[i]).powi(2))
        .sum::<f64>()
        .sqrt();
    let cov = (0..d * d)
        .map(|ij| (k.cov[(ij / d, ij % d)] - oracle[d + ij]).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(MomentError { mean, cov })
}

/// Mean and covariance discrepancy of the linearized kernel at each `t` of
/// `t_grid`, averaged over inputs `xs`, for the named schedule.
///
/// Each input is propagated to `s(t)` by the adaptive SDE solver with the
/// stream `(seed, t index, input)` so different schedules see matched noise.
#[allow(clippy::too_many_arguments)]
pub fn mean_error_diag(
    process: &dyn DiffusionProcess,
    op: TaylorOperator,
    schedule: &TimePairSchedule,
    label: &str,
    xs: &[Vec<f64>],
    t_grid: &[f64],
    sde: &AdaptiveSdeOptions,
    seed: u64,
) -> Result<Vec<MetricRecord>> {
    let mut out = Vec::with_capacity(2 * t_grid.len());
    for (ti, &t) in t_grid.iter().enumerate() {
        let s = schedule.s(t);
        let errs: Vec<MomentError> = xs
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut rng = RngStream::derived(seed, &[TAG_DIAG, ti as u64, i as u64]);
                let y_s = if s > 0.0 {
                    forward_sample(process, x, s, sde, &mut rng)?
                } else {
                    x.clone()
                };
                moment_error(process, op, &y_s, s, t, 1e-10)
            })
            .collect::<Result<_>>()?;
        let means: Vec<f64> = errs.iter().map(|e| e.mean).collect();
        let covs: Vec<f64> = errs.iter().map(|e| e.cov).collect();
        for (name, vals) in [("mean_error", means), ("cov_error", covs)] {
            let (v, se) = mean_stderr(&vals);
            out.push(
                MetricRecord::new(name, v, Some(se))
                    .with_meta("schedule", label)
                    .with_meta("t", t)
                    .with_meta("s", s),
            );
        }
    }
    Ok(out)
}

/// Monte-Carlo estimate of `∫_s^t E‖f(y_τ, τ) − T_s f(y_τ, τ)‖²/(2g²(τ)) dτ`.
///
/// Each input is propagated to `s` (adaptive solver) and then along `[s, t]`
/// with fine Euler–Maruyama steps, evaluating the integrand at Gauss–Legendre
/// nodes. Requires `ggᵀ = g²I`.
#[allow(clippy::too_many_arguments)]
pub fn kl_bound_mc(
    process: &dyn DiffusionProcess,
    op: TaylorOperator,
    xs: &[Vec<f64>],
    s: f64,
    t: f64,
    sde: &AdaptiveSdeOptions,
    nodes: usize,
    seed: u64,
) -> Result<MetricRecord> {
    if !(t > s) || nodes == 0 {
        return Err(Error::InvalidInterval { t0: s, t1: t });
    }
    let d = process.dim();
    let (gl_x, gl_w) = gauss_legendre(nodes);
    let taus: Vec<f64> = gl_x.iter().map(|u| s + 0.5 * (t - s) * (u + 1.0)).collect();
    let weights: Vec<f64> = gl_w.iter().map(|w| 0.5 * (t - s) * w).collect();
    for &tau in &taus {
        let gg = process.diffusion_sq_vec(tau);
        if gg.iter().any(|v| (v - gg[0]).abs() > 1e-12 * gg[0].abs()) || !(gg[0] > 0.0) {
            return Err(Error::Unsupported("KL bound needs ggᵀ = g²I with g > 0".into()));
        }
    }
    let vals: Vec<f64> = xs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = RngStream::derived(seed, &[TAG_KL, i as u64]);
            let y_s = if s > 0.0 {
                forward_sample(process, x, s, sde, &mut rng)?
            } else {
                x.clone()
            };
            let ss = match op {
                TaylorOperator::Ss => Some(taylor_ss(process, &y_s, s)?),
                TaylorOperator::St => None,
            };
            let st = match op {
                TaylorOperator::St => Some(taylor_st(process, &y_s, s)?),
                TaylorOperator::Ss => None,
            };
            let mut y = y_s.clone();
            let mut prev = s;
            let mut total = 0.0;
            let mut f = vec![0.0; d];
            for (&tau, &w) in taus.iter().zip(&weights) {
                let steps = (((tau - prev) / 1e-4).ceil() as usize).max(1);
                y = euler_maruyama(process, &y, prev, tau, steps, &mut rng)?;
                prev = tau;
                process.drift(&y, tau, &mut f);
                let approx = match (&ss, &st) {
                    (Some(c), _) => c.eval(&y, tau),
                    (_, Some(c)) => c.eval(&y, tau),
                    _ => unreachable!(),
                };
                let g2 = process.diffusion_sq_vec(tau)[0];
                let err: f64 = f.iter().zip(&approx).map(|(a, b)| (a - b) * (a - b)).sum();
                total += w * err / (2.0 * g2);
            }
            Ok(total)
        })
        .collect::<Result<_>>()?;
    let (v, se) = mean_stderr(&vals);
    Ok(MetricRecord::new("kl_bound", v, Some(se))
        .with_meta("s", s)
        .with_meta("t", t))
}

/// Gauss–Legendre nodes and weights on `[−1, 1]` by Newton iteration.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pn1) = if n == 1 { (z, 1.0) } else { (p1, p0) };
            let dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                let (mut q0, mut q1) = (1.0, z);
                for k in 2..=n {
                    let q2 = ((2 * k - 1) as f64 * z * q1 - (k - 1) as f64 * q0) / k as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let (qn, qn1) = if n == 1 { (z, 1.0) } else { (q1, q0) };
                let d = n as f64 * (z * qn - qn1) / (z * z - 1.0);
                w[i] = 2.0 / ((1.0 - z * z) * d * d);
                break;
            }
        }
        x[i] = z;
    }
    let mut pairs: Vec<(f64, f64)> = x.into_iter().zip(w).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::{BetaSchedule, Langevin, Prior, VpSde};

    #[test]
    fn bpd_conversions() {
        assert!((bpd(-3.0 * LN_2, 3) - 1.0).abs() < 1e-15);
        let h = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!((bpd(-h, 1) - 2.047).abs() < 1e-3);
        assert_eq!(bpd(-2.0, 1), bpd(-4.0, 2));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((i - 2.0 / 9.0).abs() < 1e-13);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn mmd_saturates_for_distant_groups() {
        let mut rng = RngStream::new(5, 0);
        let x = Array2::from_shape_fn((1000, 1), |_| rng.normal());
        let y = Array2::from_shape_fn((1000, 1), |_| 10.0 + rng.normal());
        let r = mmd_rbf(&x, &y, Some(1.0)).unwrap();
        // Within-group kernel mean is 1/√(1+2) for unit bandwidth.
        let within = 1.0 / 3f64.sqrt();
        assert!((r.value - 2.0 * within).abs() < 0.02, "{}", r.value);
        let r = mmd_rbf(&x, &y, None).unwrap();
        assert!(r.value > 1.0 && r.value < 2.0, "{}", r.value);
    }

    #[test]
    fn mmd_same_distribution_is_near_zero() {
        let mut rng = RngStream::new(6, 0);
        let x = Array2::from_shape_fn((500, 2), |_| rng.normal());
        let y = Array2::from_shape_fn((500, 2), |_| rng.normal());
        let r = mmd_rbf(&x, &y, None).unwrap();
        assert!(r.value.abs() < 3.0 * r.stderr.unwrap());
    }

    #[test]
    fn linear_process_has_zero_moment_error_and_kl_bound() {
        let p = VpSde::new(2, 0.1, 20.0).unwrap();
        let e = moment_error(&p, TaylorOperator::St, &[0.4, -1.0], 0.3, 0.5, 1e-11).unwrap();
        assert!(e.mean < 1e-8 && e.cov < 1e-8, "{e:?}");
        let xs = vec![vec![0.2, 0.1]; 4];
        let r = kl_bound_mc(&p, TaylorOperator::St, &xs, 0.2, 0.3, &AdaptiveSdeOptions::default(), 4, 1)
            .unwrap();
        assert!(r.value.abs() < 1e-20);
    }

    #[test]
    fn kl_bound_is_nonnegative_on_nonlinear_drift() {
        let p = Langevin::new(
            1,
            Prior::Mog {
                mu1: -1.0,
                mu2: 1.0,
                var: 0.5,
            },
            BetaSchedule::linear(0.1, 10.0),
        )
        .unwrap();
        let xs: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64 / 4.0 - 2.0]).collect();
        let r = kl_bound_mc(&p, TaylorOperator::St, &xs, 0.4, 0.45, &AdaptiveSdeOptions::default(), 4, 2)
            .unwrap();
        assert!(r.value > 0.0);
    }
}
