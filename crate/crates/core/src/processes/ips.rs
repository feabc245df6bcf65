use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{BetaSchedule, DiffusionProcess};
use crate::error::{Error, Result};
use crate::numcore::matrix::Matrix;

/// Exponent used in the pairwise repulsion kernel `exp(−κ‖δ‖²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepulsionConvention {
    /// `κ = 2/(2r²) = 1/r²`.
    #[default]
    Printed,
    /// `κ = 1/(2r²)`.
    HalfWidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpsParams {
    pub n: usize,
    pub a_rep: f64,
    pub r: f64,
    pub a_trap: f64,
    pub omega: f64,
    pub diffusivity: f64,
    pub gamma: f64,
    pub sigma0: f64,
    #[serde(default)]
    pub ips_exponent_convention: RepulsionConvention,
}

impl Default for IpsParams {
    fn default() -> Self {
        Self {
            n: 5,
            a_rep: 10.0,
            r: 0.5,
            a_trap: 2.0,
            omega: 1.0,
            diffusivity: 0.25,
            gamma: 5.0,
            sigma0: 0.5,
            ips_exponent_convention: RepulsionConvention::Printed,
        }
    }
}

/// Particles in a rotating quartic trap with Gaussian pairwise repulsion.
///
/// State layout is `[x_1, y_1, x_2, y_2, ...]`.
#[derive(Debug, Clone)]
pub struct Ips {
    params: IpsParams,
    b: f64,
    kappa: f64,
    rep: f64,
}

impl Ips {
    pub fn new(params: IpsParams) -> Result<Self> {
        let p = &params;
        let positive = [p.r, p.diffusivity, p.gamma, p.sigma0];
        if p.n == 0 || positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!("ips parameters {p:?}")));
        }
        let big_r = (p.gamma * p.n as f64).sqrt() * p.r;
        let b = p.diffusivity / (big_r * big_r);
        let kappa = match p.ips_exponent_convention {
            RepulsionConvention::Printed => 1.0 / (p.r * p.r),
            RepulsionConvention::HalfWidth => 1.0 / (2.0 * p.r * p.r),
        };
        let rep = p.a_rep / (p.n as f64 * p.r * p.r);
        Ok(Self {
            params,
            b,
            kappa,
            rep,
        })
    }

    pub fn params(&self) -> &IpsParams {
        &self.params
    }

    /// Trap centre `a(cos πωt, sin πωt)`.
    pub fn trap(&self, t: f64) -> [f64; 2] {
        let w = PI * self.params.omega * t;
        [self.params.a_trap * w.cos(), self.params.a_trap * w.sin()]
    }

    fn trap_velocity(&self, t: f64) -> [f64; 2] {
        let k = PI * self.params.omega;
        let w = k * t;
        [-self.params.a_trap * k * w.sin(), self.params.a_trap * k * w.cos()]
    }

    /// `∂/∂u` of `−4B·u‖u‖²`.
    fn confinement_jacobian(&self, u: [f64; 2]) -> [[f64; 2]; 2] {
        let n2 = u[0] * u[0] + u[1] * u[1];
        let k = -4.0 * self.b;
        [
            [k * (n2 + 2.0 * u[0] * u[0]), k * 2.0 * u[0] * u[1]],
            [k * 2.0 * u[1] * u[0], k * (n2 + 2.0 * u[1] * u[1])],
        ]
    }

    /// `∂/∂δ` of `δ·exp(−κ‖δ‖²)`.
    fn pair_jacobian(&self, d: [f64; 2]) -> [[f64; 2]; 2] {
        let e = (-self.kappa * (d[0] * d[0] + d[1] * d[1])).exp();
        let k = 2.0 * self.kappa;
        [
            [e * (1.0 - k * d[0] * d[0]), -e * k * d[0] * d[1]],
            [-e * k * d[1] * d[0], e * (1.0 - k * d[1] * d[1])],
        ]
    }
}

impl DiffusionProcess for Ips {
    fn dim(&self) -> usize {
        2 * self.params.n
    }

    fn drift(&self, y: &[f64], t: f64, out: &mut [f64]) {
        let n = self.params.n;
        let c = self.trap(t);
        for i in 0..n {
            let u = [y[2 * i] - c[0], y[2 * i + 1] - c[1]];
            let n2 = u[0] * u[0] + u[1] * u[1];
            let mut f = [-4.0 * self.b * u[0] * n2, -4.0 * self.b * u[1] * n2];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = [y[2 * i] - y[2 * j], y[2 * i + 1] - y[2 * j + 1]];
                let e = (-self.kappa * (d[0] * d[0] + d[1] * d[1])).exp();
                f[0] += self.rep * d[0] * e;
                f[1] += self.rep * d[1] * e;
            }
            out[2 * i] = f[0];
            out[2 * i + 1] = f[1];
        }
    }

    fn drift_jacobian(&self, y: &[f64], t: f64) -> Matrix {
        let n = self.params.n;
        let c = self.trap(t);
        let mut jac = Matrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            let u = [y[2 * i] - c[0], y[2 * i + 1] - c[1]];
            let cj = self.confinement_jacobian(u);
            for a in 0..2 {
                for b in 0..2 {
                    jac[(2 * i + a, 2 * i + b)] += cj[a][b];
                }
            }
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = [y[2 * i] - y[2 * j], y[2 * i + 1] - y[2 * j + 1]];
                let m = self.pair_jacobian(d);
                for a in 0..2 {
                    for b in 0..2 {
                        jac[(2 * i + a, 2 * i + b)] += self.rep * m[a][b];
                        jac[(2 * i + a, 2 * j + b)] -= self.rep * m[a][b];
                    }
                }
            }
        }
        jac
    }

    fn drift_time_derivative(&self, y: &[f64], t: f64, out: &mut [f64]) {
        let c = self.trap(t);
        let v = self.trap_velocity(t);
        for i in 0..self.params.n {
            let u = [y[2 * i] - c[0], y[2 * i + 1] - c[1]];
            let cj = self.confinement_jacobian(u);
            // Only the trap moves, and ∂u/∂t = −β'(t).
            out[2 * i] = -(cj[0][0] * v[0] + cj[0][1] * v[1]);
            out[2 * i + 1] = -(cj[1][0] * v[0] + cj[1][1] * v[1]);
        }
    }

    fn drift_divergence(&self, y: &[f64], t: f64) -> f64 {
        let n = self.params.n;
        let c = self.trap(t);
        let mut div = 0.0;
        for i in 0..n {
            let u = [y[2 * i] - c[0], y[2 * i + 1] - c[1]];
            div += -16.0 * self.b * (u[0] * u[0] + u[1] * u[1]);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = [y[2 * i] - y[2 * j], y[2 * i + 1] - y[2 * j + 1]];
                let n2 = d[0] * d[0] + d[1] * d[1];
                div += self.rep * (-self.kappa * n2).exp() * (2.0 - 2.0 * self.kappa * n2);
            }
        }
        div
    }

    fn diffusion_sq(&self, _t: f64, out: &mut [f64]) {
        out.fill(2.0 * self.params.diffusivity);
    }

    fn noise_rate(&self) -> (BetaSchedule, f64) {
        let beta = 2.0 * self.params.diffusivity;
        (BetaSchedule::Constant { beta }, 1.0)
    }

    fn diffusion_sq_integral(&self, s: f64, t: f64, out: &mut [f64]) {
        out.fill(2.0 * self.params.diffusivity * (t - s));
    }
}
