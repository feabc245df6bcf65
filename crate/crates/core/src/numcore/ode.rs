//! Dormand–Prince 5(4) integrator with local error control.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights (same as the last stage row, FSAL).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const MAX_STEPS: usize = 10_000_000;

/// Integrates `dy/dt = field(t, y)` from `t0` to `t1` with rtol = atol = `tol`.
pub fn ode_solve<F>(field: F, y0: &[f64], t0: f64, t1: f64, tol: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut out = ode_solve_at(field, y0, t0, &[t1], tol)?;
    Ok(out.pop().expect("one output time"))
}

/// Integrates from `t0` through each of the nondecreasing `times`, returning
/// the state at every requested time.
pub fn ode_solve_at<F>(
    mut field: F,
    y0: &[f64],
    t0: f64,
    times: &[f64],
    tol: f64,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("ode tolerance {tol}")));
    }
    let mut prev = t0;
    for &t in times {
        if !(t >= prev) || !t.is_finite() {
            return Err(Error::InvalidInterval { t0: prev, t1: t });
        }
        prev = t;
    }
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    let span = times.last().map_or(0.0, |&t1| t1 - t0);
    let mut h = (0.01 * span).max(1e-6);
    let mut steps = 0usize;
    let mut results = Vec::with_capacity(times.len());

    field(t, &y, &mut k[0]);
    for &target in times {
        while t < target {
            let remaining = target - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for j in 0..s {
                        acc += step * A[s][j] * k[j][i];
                    }
                    stage[i] = acc;
                }
                field(t + C[s] * step, &stage, &mut k[s]);
            }
            let mut err_sq = 0.0;
            for i in 0..n {
                let mut hi = y[i];
                let mut diff = 0.0;
                for s in 0..7 {
                    hi += step * B5[s] * k[s][i];
                    diff += step * (B5[s] - B4[s]) * k[s][i];
                }
                y5[i] = hi;
                let scale = tol + tol * y[i].abs().max(hi.abs());
                err_sq += (diff / scale).powi(2);
            }
            let err = if n == 0 { 0.0 } else { (err_sq / n as f64).sqrt() };
            steps += 1;
            if !err.is_finite() {
                if y5.iter().any(|v| !v.is_finite()) && step < 1e-12 * t.abs().max(1.0) {
                    return Err(Error::NonFiniteState { step: steps, t });
                }
                h = step * 0.1;
            } else if err <= 1.0 {
                t = if last { target } else { t + step };
                std::mem::swap(&mut y, &mut y5);
                k.swap(0, 6);
                let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // Keep the pre-clip step size after landing on an output time.
                h = if last { h.max(step) } else { step * grow };
            } else {
                h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            }
            if h < 1e-14 * t.abs().max(1.0) || steps > MAX_STEPS {
                return Err(Error::StepUnderflow { t, step: h });
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: steps, t });
        }
        results.push(y.clone());
    }
    Ok(results)
}
