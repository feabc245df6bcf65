//! Local denoising score matching for nonlinear diffusions.

pub mod error;
pub mod eval;
pub mod generate;
pub mod linearize;
pub mod model;
pub mod numcore;
pub mod objectives;
pub mod processes;
pub mod schedule;

pub use error::{Error, Result};
pub use linearize::{GaussianTransition, TaylorOperator};
pub use numcore::{Matrix, RngStream};
pub use processes::{DiffusionProcess, Prior};
pub use schedule::{ScheduleSpec, TimePairSchedule};
