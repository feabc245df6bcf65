//! Experiment configuration, dotted-path overrides, and hashing.

use anyhow::{bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use local_dsm::generate::SamplerKind;
use local_dsm::linearize::TaylorOperator;
use local_dsm::model::{AdamWConfig, ModelSpec};
use local_dsm::numcore::sde::AdaptiveSdeOptions;
use local_dsm::objectives::{ObjectiveKind, ObjectiveSpec, DEFAULT_DELTA};
use local_dsm::processes::{Dataset, Prior, ProcessSpec};
use local_dsm::schedule::ScheduleSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Checkerboard,
    ActiveSwimmer,
    Ips,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    pub t_max: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "one")]
    pub mc_times: usize,
    #[serde(default = "one")]
    pub hutchinson_probes: usize,
    #[serde(default)]
    pub stratified: bool,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default)]
    pub sde: AdaptiveSdeOptions,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: u64,
    pub seed: u64,
    pub lr: f64,
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "adam_eps")]
    pub eps: f64,
    #[serde(default = "weight_decay")]
    pub weight_decay: f64,
    /// Steps between checkpoints; the final step is always saved.
    #[serde(default = "checkpoint_every")]
    pub checkpoint_every: u64,
    /// Adds elapsed seconds to metric records, which makes outputs
    /// nondeterministic.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Stops training once the optimization steps alone have used this many
    /// seconds. Runs that hit the budget are not reproducible.
    #[serde(default)]
    pub time_budget_seconds: Option<f64>,
    /// Decay of the parameter moving average used for evaluation and
    /// sampling; evaluation uses the raw parameters when absent.
    #[serde(default)]
    pub ema_decay: Option<f64>,
}

fn beta1() -> f64 {
    AdamWConfig::default().beta1
}

fn beta2() -> f64 {
    AdamWConfig::default().beta2
}

fn adam_eps() -> f64 {
    AdamWConfig::default().eps
}

fn weight_decay() -> f64 {
    AdamWConfig::default().weight_decay
}

fn checkpoint_every() -> u64 {
    5000
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Steps between sample-quality evaluations; 0 disables them during
    /// training.
    #[serde(default = "mmd_every")]
    pub mmd_every: u64,
    pub sample_count: usize,
    /// Reference samples drawn from the data (reverse SDE) or the forward
    /// SDE (PF-ODE).
    pub reference_count: usize,
    pub sampler: SamplerKind,
    #[serde(default = "reverse_steps")]
    pub reverse_steps: usize,
    #[serde(default = "ode_tol")]
    pub ode_tol: f64,
    /// Snapshot times for the PF-ODE.
    #[serde(default)]
    pub t_grid: Vec<f64>,
    /// Held-out points for the ELBO in `eval`.
    #[serde(default = "elbo_count")]
    pub elbo_count: usize,
}

fn mmd_every() -> u64 {
    500
}

fn reverse_steps() -> usize {
    local_dsm::generate::DEFAULT_REVERSE_STEPS
}

fn ode_tol() -> f64 {
    local_dsm::generate::DEFAULT_ODE_TOL
}

fn elbo_count() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagConfig {
    /// λ of the scheduled pairs compared against the fixed gap.
    pub lambda: f64,
    pub gap: f64,
    pub inputs: usize,
    pub t_grid: Vec<f64>,
    pub kl_lambdas: Vec<f64>,
    pub kl_t: f64,
    pub kl_inputs: usize,
    #[serde(default = "kl_nodes")]
    pub kl_nodes: usize,
}

fn kl_nodes() -> usize {
    4
}

impl Default for DiagConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            gap: 0.05,
            inputs: 1000,
            t_grid: (1..=19).map(|i| i as f64 * 0.05).collect(),
            kl_lambdas: vec![0.05, 0.02, 0.01],
            kl_t: 0.6,
            kl_inputs: 200,
            kl_nodes: kl_nodes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub process: ProcessSpec,
    /// Model prior π_θ that starts the reverse SDE and enters the ELBO.
    #[serde(default)]
    pub prior: Option<Prior>,
    /// Distribution of `y_0`.
    pub data: Dataset,
    pub schedule: ScheduleSpec,
    pub taylor_operator: TaylorOperator,
    pub objective: ObjectiveConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    #[serde(default)]
    pub diag: DiagConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("parsing experiment config")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `a.b.c=value` overrides. Values parse as JSON when possible
    /// and as bare strings otherwise.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for s in sets {
            let (path, raw) = s
                .split_once('=')
                .with_context(|| format!("override {s:?} is not of the form key=value"))?;
            let value: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut v, path, value)?;
        }
        serde_json::from_value(v).context("applying overrides")
    }

    pub fn objective_spec(&self) -> ObjectiveSpec {
        let o = &self.objective;
        ObjectiveSpec {
            kind: o.kind,
            t_max: o.t_max,
            delta: o.delta,
            mc_times: o.mc_times,
            hutchinson_probes: o.hutchinson_probes,
            stratified: o.stratified,
            antithetic: o.antithetic,
            taylor_operator: self.taylor_operator,
            sde: o.sde,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective_spec().validate()?;
        if self.data.dim() != self.process.dim() {
            bail!(
                "data dimension {} differs from process dimension {}",
                self.data.dim(),
                self.process.dim()
            );
        }
        if self.train.batch == 0 {
            bail!("train.batch must be positive");
        }
        if !(self.train.lr > 0.0) {
            bail!("train.lr must be positive");
        }
        if self.train.ema_decay.is_some_and(|d| !(0.0..1.0).contains(&d)) {
            bail!("train.ema_decay must lie in [0, 1)");
        }
        if self.train.checkpoint_every == 0 {
            bail!("train.checkpoint_every must be positive");
        }
        if self.eval.sample_count < 2 || self.eval.reference_count < 2 {
            bail!("eval sample counts must be at least 2");
        }
        if self.eval.sampler == SamplerKind::ReverseSde && self.prior.is_none() {
            bail!("the reverse-SDE sampler needs a prior");
        }
        if self.eval.sampler == SamplerKind::PfOde && self.eval.t_grid.is_empty() {
            bail!("the PF-ODE sampler needs eval.t_grid");
        }
        if self.eval.t_grid.windows(2).any(|w| w[1] < w[0]) {
            bail!("eval.t_grid must be nondecreasing");
        }
        self.process.build()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON with `train.steps` removed, so that a
    /// run extended by resuming keeps its hash.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(train) = v.get_mut("train").and_then(Value::as_object_mut) {
            train.remove("steps");
        }
        let text = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .with_context(|| format!("{path}: {key:?} is not an array index"))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .with_context(|| format!("{path}: index {idx} out of range {len}"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            Value::Null => {
                *cur = Value::Object(Default::default());
                let Value::Object(map) = cur else { unreachable!() };
                if last {
                    map.insert(key.to_string(), value);
                    return Ok(());
                }
                map.entry(key.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            _ => bail!("{path}: cannot descend into a scalar at {key:?}"),
        };
    }
    bail!("empty override path")
}
