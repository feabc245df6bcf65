use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::numcore::rng::RngStream;

/// Product prior: every coordinate is drawn independently from the same
/// one-dimensional law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    Gaussian { mean: f64, var: f64 },
    /// Equal-weight mixture `½N(mu1, var) + ½N(mu2, var)`.
    Mog { mu1: f64, mu2: f64, var: f64 },
    /// Standard logistic, density `e^{−x}/(1 + e^{−x})²`.
    Logistic,
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * (x - mean).powi(2) / var
}

impl Prior {
    pub fn standard_normal() -> Self {
        Self::Gaussian { mean: 0.0, var: 1.0 }
    }

    /// Posterior weight of the first component.
    fn mog_resp(x: f64, mu1: f64, mu2: f64, var: f64) -> f64 {
        let l1 = -0.5 * (x - mu1).powi(2) / var;
        let l2 = -0.5 * (x - mu2).powi(2) / var;
        1.0 / (1.0 + (l2 - l1).exp())
    }

    pub fn log_density_1d(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, var } => log_normal(x, mean, var),
            Self::Mog { mu1, mu2, var } => {
                let a = log_normal(x, mu1, var);
                let b = log_normal(x, mu2, var);
                let m = a.max(b);
                m + (0.5 * (a - m).exp() + 0.5 * (b - m).exp()).ln()
            }
            Self::Logistic => {
                let z = x.abs();
                -z - 2.0 * (-z).exp().ln_1p()
            }
        }
    }

    pub fn score_1d(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { mean, var } => -(x - mean) / var,
            Self::Mog { mu1, mu2, var } => {
                let r = Self::mog_resp(x, mu1, mu2, var);
                -(r * (x - mu1) + (1.0 - r) * (x - mu2)) / var
            }
            Self::Logistic => -(0.5 * x).tanh(),
        }
    }

    /// Second derivative of the log-density.
    pub fn score_derivative_1d(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { var, .. } => -1.0 / var,
            Self::Mog { mu1, mu2, var } => {
                let r = Self::mog_resp(x, mu1, mu2, var);
                -1.0 / var + r * (1.0 - r) * ((mu1 - mu2) / var).powi(2)
            }
            Self::Logistic => {
                let th = (0.5 * x).tanh();
                -0.5 * (1.0 - th * th)
            }
        }
    }

    pub fn log_density(&self, y: &[f64]) -> f64 {
        y.iter().map(|&x| self.log_density_1d(x)).sum()
    }

    pub fn score(&self, y: &[f64], out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(y) {
            *o = self.score_1d(x);
        }
    }

    pub fn sample_1d(&self, rng: &mut RngStream) -> f64 {
        match *self {
            Self::Gaussian { mean, var } => mean + var.sqrt() * rng.normal(),
            Self::Mog { mu1, mu2, var } => {
                let mu = if rng.uniform() < 0.5 { mu1 } else { mu2 };
                mu + var.sqrt() * rng.normal()
            }
            Self::Logistic => {
                // Open interval keeps the logit finite.
                let u = loop {
                    let u = rng.uniform();
                    if u > 0.0 {
                        break u;
                    }
                };
                (u / (1.0 - u)).ln()
            }
        }
    }

    pub fn sample(&self, rng: &mut RngStream, out: &mut [f64]) {
        for o in out {
            *o = self.sample_1d(rng);
        }
    }

    pub fn mean_1d(&self) -> f64 {
        match *self {
            Self::Gaussian { mean, .. } => mean,
            Self::Mog { mu1, mu2, .. } => 0.5 * (mu1 + mu2),
            Self::Logistic => 0.0,
        }
    }

    pub fn variance_1d(&self) -> f64 {
        match *self {
            Self::Gaussian { var, .. } => var,
            Self::Mog { mu1, mu2, var } => var + 0.25 * (mu1 - mu2).powi(2),
            Self::Logistic => PI * PI / 3.0,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match *self {
            Self::Gaussian { mean, .. } => mean == 0.0,
            Self::Mog { mu1, mu2, .. } => mu1 == -mu2,
            Self::Logistic => true,
        }
    }
}
