//! Euler–Maruyama integrators for diagonal-noise SDEs.

use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use crate::error::{Error, Result};
use crate::processes::DiffusionProcess;

/// Fixed step count used when none is given, per unit time.
pub const DEFAULT_STEPS_PER_UNIT: usize = 1000;

/// Fixed-step Euler–Maruyama from `t0` to `t1`.
pub fn euler_maruyama(
    process: &dyn DiffusionProcess,
    y0: &[f64],
    t0: f64,
    t1: f64,
    steps: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if !(t1 > t0) {
        return Err(Error::InvalidInterval { t0, t1 });
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    let d = process.dim();
    let h = (t1 - t0) / steps as f64;
    let sqrt_h = h.sqrt();
    let mut y = y0.to_vec();
    let mut f = vec![0.0; d];
    let mut g2 = vec![0.0; d];
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        process.drift(&y, t, &mut f);
        process.diffusion_sq(t, &mut g2);
        for i in 0..d {
            y[i] += f[i] * h + g2[i].sqrt() * sqrt_h * rng.normal();
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: k, t: t + h });
        }
    }
    Ok(y)
}

/// Tolerances for [`adaptive_sde_sample`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Consecutive rejections allowed at one time point.
    pub max_halvings: usize,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
}

impl Default for AdaptiveSdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-4,
            atol: 1e-6,
            max_halvings: 30,
            initial_step: 1e-2,
            min_step: 1e-8,
            max_step: 0.1,
        }
    }
}

/// Output of [`adaptive_sde_sample_stats`].
#[derive(Debug, Clone, Default)]
pub struct AdaptiveStats {
    pub accepted: usize,
    pub rejected: usize,
}

/// Step-size-adapted Euler–Maruyama.
///
/// The local error is the difference between one drift step of size `h` and
/// two of size `h/2`. A rejected step keeps its Brownian increment and splits
/// it with a Brownian bridge, so the sampled path is the same whatever the
/// step sequence.
pub fn adaptive_sde_sample(
    process: &dyn DiffusionProcess,
    y0: &[f64],
    t0: f64,
    t1: f64,
    opts: &AdaptiveSdeOptions,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    adaptive_sde_sample_stats(process, y0, t0, t1, opts, rng).map(|(y, _)| y)
}

pub fn adaptive_sde_sample_stats(
    process: &dyn DiffusionProcess,
    y0: &[f64],
    t0: f64,
    t1: f64,
    opts: &AdaptiveSdeOptions,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, AdaptiveStats)> {
    if !(t1 > t0) {
        return Err(Error::InvalidInterval { t0, t1 });
    }
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidParameter("sde tolerances must be positive".into()));
    }
    let d = process.dim();
    let mut stats = AdaptiveStats::default();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut h = opts.initial_step.min(opts.max_step);
    // Pending Brownian segments, last element covers the next time slice.
    let mut pending: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut f0 = vec![0.0; d];
    let mut f_mid = vec![0.0; d];
    let mut g2_0 = vec![0.0; d];
    let mut g2_mid = vec![0.0; d];
    let mut y_mid = vec![0.0; d];
    let mut bridge = vec![0.0; d];
    let mut halvings = 0usize;

    process.drift(&y, t, &mut f0);
    while t1 - t > 1e-14 * t1.abs().max(1.0) {
        if pending.is_empty() {
            let step = h.min(t1 - t);
            let dw: Vec<f64> = (0..d).map(|_| step.sqrt() * rng.normal()).collect();
            pending.push((step, dw));
        }
        let (step, dw) = pending.last().expect("segment present");
        let step = *step;
        let half = 0.5 * step;
        // Mean of g² over each half step, so the noise variance is exact for
        // state-independent diffusions.
        process.diffusion_sq_integral(t, t + half, &mut g2_0);
        for g in g2_0.iter_mut() {
            *g /= half;
        }
        for i in 0..d {
            bridge[i] = 0.5 * dw[i] + (0.25 * step).sqrt() * rng.normal();
            y_mid[i] = y[i] + f0[i] * half + g2_0[i].sqrt() * bridge[i];
        }
        process.drift(&y_mid, t + half, &mut f_mid);

        let mut err = 0.0_f64;
        for i in 0..d {
            // Drift of two half steps minus one full step.
            let e = (f_mid[i] - f0[i]) * half;
            let y_new = y_mid[i] + f_mid[i] * half;
            let scale = opts.atol + opts.rtol * y[i].abs().max(y_new.abs());
            err = err.max(e.abs() / scale);
        }

        if err <= 1.0 && err.is_finite() {
            process.diffusion_sq_integral(t + half, t + step, &mut g2_mid);
            for g in g2_mid.iter_mut() {
                *g /= half;
            }
            let (_, dw) = pending.pop().expect("segment present");
            for i in 0..d {
                y[i] = y_mid[i] + f_mid[i] * half + g2_mid[i].sqrt() * (dw[i] - bridge[i]);
            }
            t += step;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteState {
                    step: stats.accepted,
                    t,
                });
            }
            stats.accepted += 1;
            halvings = 0;
            let grow = if err == 0.0 {
                2.0
            } else {
                (0.9 / err.sqrt()).clamp(0.2, 2.0)
            };
            h = (step * grow).min(opts.max_step);
            process.drift(&y, t, &mut f0);
        } else {
            stats.rejected += 1;
            halvings += 1;
            if half < opts.min_step || halvings > opts.max_halvings {
                return Err(Error::StepUnderflow { t, step: half });
            }
            let (_, dw) = pending.pop().expect("segment present");
            let second: Vec<f64> = dw.iter().zip(&bridge).map(|(w, b)| w - b).collect();
            pending.push((half, second));
            pending.push((half, bridge.clone()));
            h = half;
        }
    }
    Ok((y, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::{ActiveSwimmer, BetaSchedule, Langevin, Prior};

    fn ou() -> Langevin {
        Langevin::new(1, Prior::standard_normal(), BetaSchedule::Constant { beta: 1.0 }).unwrap()
    }

    #[test]
    fn euler_maruyama_is_reproducible() {
        let p = ou();
        let a = euler_maruyama(&p, &[0.5], 0.0, 1.0, 100, &mut RngStream::new(9, 1)).unwrap();
        let b = euler_maruyama(&p, &[0.5], 0.0, 1.0, 100, &mut RngStream::new(9, 1)).unwrap();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn swimmer_from_far_start_stays_bounded() {
        let p = ActiveSwimmer::new(0.1, 1.0).unwrap();
        let opts = AdaptiveSdeOptions::default();
        for k in 0..20 {
            let mut rng = RngStream::new(4, k);
            let y = adaptive_sde_sample(&p, &[10.0, 0.0], 0.0, 5.0, &opts, &mut rng).unwrap();
            assert!(y[0].abs() < 3.0, "x(5) = {}", y[0]);
        }
    }

    #[test]
    fn rejects_bad_intervals() {
        let p = ou();
        let mut rng = RngStream::new(0, 0);
        assert!(euler_maruyama(&p, &[0.0], 1.0, 1.0, 10, &mut rng).is_err());
        assert!(adaptive_sde_sample(&p, &[0.0], 1.0, 0.5, &Default::default(), &mut rng).is_err());
    }
}
