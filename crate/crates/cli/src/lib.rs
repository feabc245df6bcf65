//! Experiment runner for local denoising score matching: configuration,
//! presets, training loops, checkpoints, and metric output.

pub mod checkpoint;
pub mod config;
pub mod output;
pub mod presets;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use run::{run_diag, run_eval, run_sample, run_train};

use anyhow::Result;

/// Resolves a configuration from an optional file, an optional preset, and
/// dotted overrides. A file takes precedence over a preset.
pub fn resolve_config(
    path: Option<&std::path::Path>,
    preset: Option<&str>,
    sets: &[String],
) -> Result<ExperimentConfig> {
    let base = match (path, preset) {
        (Some(p), _) => run::load_run_config(p)?,
        (None, Some(name)) => presets::preset(name)?,
        (None, None) => anyhow::bail!("either --config or --preset is required"),
    };
    base.with_overrides(sets)
}

/// Caps the global thread pool from `LOCAL_DSM_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("LOCAL_DSM_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("LOCAL_DSM_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}
