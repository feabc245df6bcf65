use serde::{Deserialize, Serialize};

use crate::numcore::rng::RngStream;

/// Data distributions used as initial conditions of the inference process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dataset {
    /// Uniform on the parity-occupied squares of side 2 tiling `[−4, 4]²`.
    Checkerboard,
    /// Isotropic Gaussian `N(mean, std²·I)`.
    Gaussian { dim: usize, mean: f64, std: f64 },
}

impl Dataset {
    pub fn dim(&self) -> usize {
        match self {
            Self::Checkerboard => 2,
            Self::Gaussian { dim, .. } => *dim,
        }
    }

    pub fn sample(&self, rng: &mut RngStream, out: &mut [f64]) {
        match *self {
            Self::Checkerboard => {
                let k = rng.below(8);
                let i = k / 2;
                let j = 2 * (k % 2) + (i % 2);
                out[0] = -4.0 + 2.0 * i as f64 + 2.0 * rng.uniform();
                out[1] = -4.0 + 2.0 * j as f64 + 2.0 * rng.uniform();
            }
            Self::Gaussian { mean, std, .. } => {
                for o in out {
                    *o = mean + std * rng.normal();
                }
            }
        }
    }

    pub fn sample_vec(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample(rng, &mut out);
        out
    }

    pub fn in_support(&self, x: &[f64]) -> bool {
        match self {
            Self::Checkerboard => {
                if !x.iter().all(|v| (-4.0..4.0).contains(v)) {
                    return false;
                }
                let i = ((x[0] + 4.0) / 2.0).floor() as i64;
                let j = ((x[1] + 4.0) / 2.0).floor() as i64;
                (i + j) % 2 == 0
            }
            Self::Gaussian { .. } => x.iter().all(|v| v.is_finite()),
        }
    }
}
