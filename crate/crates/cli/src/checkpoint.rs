//! Single-document JSON checkpoints.

use std::path::Path;

use anyhow::{bail, Context as _, Result};
use serde::{Deserialize, Serialize};

use local_dsm::model::{AdamW, ScoreModel};
use local_dsm::numcore::RngState;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub step: u64,
    /// Position of the data stream after `step` batches.
    pub rng_state: RngState,
    pub arrays: Vec<NamedArray>,
    pub optimizer: AdamW,
    /// Moving average of the flat parameter vector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ema: Option<Vec<f64>>,
}

impl Checkpoint {
    pub fn capture(
        config_hash: &str,
        seed: u64,
        step: u64,
        rng_state: RngState,
        model: &ScoreModel,
        optimizer: &AdamW,
        ema: Option<&[f64]>,
    ) -> Self {
        let arrays = model
            .named_arrays()
            .into_iter()
            .map(|(name, shape, values)| NamedArray { name, shape, values })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.to_string(),
            seed,
            step,
            rng_state,
            arrays,
            optimizer: optimizer.clone(),
            ema: ema.map(<[f64]>::to_vec),
        }
    }

    /// Loads the parameters into `model`, which must have the same layout.
    pub fn restore(&self, model: &mut ScoreModel) -> Result<()> {
        let arrays: Vec<_> = self
            .arrays
            .iter()
            .map(|a| (a.name.clone(), a.shape.clone(), a.values.clone()))
            .collect();
        model.load_arrays(&arrays)?;
        if self.optimizer.m.len() != model.num_params() || self.optimizer.v.len() != model.num_params() {
            bail!("optimizer moments do not match the model size");
        }
        if self.ema.as_ref().is_some_and(|e| e.len() != model.num_params()) {
            bail!("parameter average does not match the model size");
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text).context("parsing checkpoint")?;
        if ck.schema_version != SCHEMA_VERSION {
            bail!(
                "checkpoint schema {} is not supported (expected {SCHEMA_VERSION})",
                ck.schema_version
            );
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn file_name(step: u64) -> String {
        format!("checkpoint_{step:08}.json")
    }
}
