//! Dense linear algebra and integrators.

pub mod expm;
pub mod gemm;
pub mod matrix;
pub mod ode;
pub mod quad;
pub mod rng;
pub mod sde;
pub mod sqrtm;

pub use expm::{exp_upper_2x2, mat_exp};
pub use matrix::Matrix;
pub use ode::{ode_solve, ode_solve_at};
pub use quad::{integrate, integrate_vec};
pub use rng::{RngState, RngStream};
pub use sde::{adaptive_sde_sample, euler_maruyama, AdaptiveSdeOptions};
pub use sqrtm::{sqrtm_spd, sqrtm_spd_floored, SpdRoot};
