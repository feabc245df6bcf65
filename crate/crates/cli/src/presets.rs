//! Built-in experiment configurations.

use anyhow::{bail, Result};

use local_dsm::generate::SamplerKind;
use local_dsm::linearize::TaylorOperator;
use local_dsm::model::{ModelSpec, Parameterization};
use local_dsm::numcore::sde::AdaptiveSdeOptions;
use local_dsm::objectives::{ObjectiveKind, DEFAULT_DELTA};
use local_dsm::processes::{BetaSchedule, Dataset, IpsParams, Prior, ProcessSpec};
use local_dsm::schedule::{ScheduleKind, ScheduleSpec, DEFAULT_LAMBDA};

use crate::config::{
    DiagConfig, EvalConfig, Experiment, ExperimentConfig, ObjectiveConfig, TrainConfig,
};

pub const PRESETS: [&str; 3] = ["checkerboard", "active_swimmer", "ips"];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    Ok(match name {
        "checkerboard" => checkerboard(),
        "active_swimmer" => active_swimmer(),
        "ips" => ips(),
        other => bail!("unknown preset {other:?}; expected one of {PRESETS:?}"),
    })
}

fn mlp_3x256(parameterization: Parameterization, odd: bool) -> ModelSpec {
    ModelSpec {
        hidden: vec![256; 3],
        time_features: 4,
        parameterization,
        odd,
        zero_output_init: true,
    }
}

fn train(steps: u64) -> TrainConfig {
    TrainConfig {
        batch: 1024,
        steps,
        seed: 0,
        lr: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 1e-4,
        checkpoint_every: 5000,
        record_wall_time: false,
        time_budget_seconds: None,
        ema_decay: Some(0.999),
    }
}

/// Training tolerances for sampling `y_s`; looser than the solver default.
fn training_sde() -> AdaptiveSdeOptions {
    AdaptiveSdeOptions {
        rtol: 1e-2,
        atol: 1e-3,
        ..AdaptiveSdeOptions::default()
    }
}

/// Langevin inference on the 2D checkerboard with a Logistic prior.
pub fn checkerboard() -> ExperimentConfig {
    let beta = BetaSchedule::linear(0.1, 10.0);
    ExperimentConfig {
        experiment: Experiment::Checkerboard,
        process: ProcessSpec::Langevin {
            dim: 2,
            prior: Prior::Logistic,
            beta,
        },
        prior: Some(Prior::Logistic),
        data: Dataset::Checkerboard,
        schedule: ScheduleSpec::lambda(ScheduleKind::LambdaLinear, DEFAULT_LAMBDA),
        taylor_operator: TaylorOperator::St,
        objective: ObjectiveConfig {
            kind: ObjectiveKind::LocalDsmElbo,
            t_max: 1.0,
            delta: DEFAULT_DELTA,
            mc_times: 1,
            hutchinson_probes: 1,
            stratified: false,
            antithetic: false,
            sde: training_sde(),
        },
        model: mlp_3x256(Parameterization::Epsilon, false),
        train: train(20_000),
        eval: EvalConfig {
            mmd_every: 500,
            sample_count: 1000,
            reference_count: 1000,
            sampler: SamplerKind::ReverseSde,
            reverse_steps: 250,
            ode_tol: 1e-5,
            t_grid: vec![],
            elbo_count: 500,
        },
        diag: DiagConfig::default(),
    }
}

/// Active swimmer from `N(0, I)` on `[0, 5]`.
pub fn active_swimmer() -> ExperimentConfig {
    ExperimentConfig {
        experiment: Experiment::ActiveSwimmer,
        process: ProcessSpec::ActiveSwimmer {
            gamma: 0.1,
            diffusivity: 1.0,
        },
        prior: None,
        data: Dataset::Gaussian {
            dim: 2,
            mean: 0.0,
            std: 1.0,
        },
        schedule: ScheduleSpec::lambda(ScheduleKind::LambdaNumeric, DEFAULT_LAMBDA),
        taylor_operator: TaylorOperator::Ss,
        objective: ObjectiveConfig {
            kind: ObjectiveKind::ScoreMatching,
            t_max: 5.0,
            delta: DEFAULT_DELTA,
            mc_times: 1,
            hutchinson_probes: 1,
            stratified: false,
            antithetic: false,
            sde: training_sde(),
        },
        model: mlp_3x256(Parameterization::DirectScore, true),
        train: train(200_000),
        eval: EvalConfig {
            mmd_every: 10_000,
            sample_count: 1000,
            reference_count: 1000,
            sampler: SamplerKind::PfOde,
            reverse_steps: 1000,
            ode_tol: 1e-5,
            t_grid: vec![1.0, 3.0, 5.0],
            elbo_count: 0,
        },
        diag: DiagConfig {
            kl_t: 3.0,
            t_grid: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
            ..DiagConfig::default()
        },
    }
}

/// Five particles in a rotating trap from `N(0, σ0² I)` on `[0, 10]`.
pub fn ips() -> ExperimentConfig {
    let params = IpsParams::default();
    ExperimentConfig {
        experiment: Experiment::Ips,
        data: Dataset::Gaussian {
            dim: 2 * params.n,
            mean: 0.0,
            std: params.sigma0,
        },
        process: ProcessSpec::Ips(params),
        prior: None,
        schedule: ScheduleSpec::lambda(ScheduleKind::LambdaNumeric, DEFAULT_LAMBDA),
        taylor_operator: TaylorOperator::Ss,
        objective: ObjectiveConfig {
            kind: ObjectiveKind::ScoreMatching,
            t_max: 10.0,
            delta: DEFAULT_DELTA,
            mc_times: 1,
            hutchinson_probes: 1,
            stratified: false,
            antithetic: false,
            sde: training_sde(),
        },
        model: mlp_3x256(Parameterization::DirectScore, false),
        train: train(10_000),
        eval: EvalConfig {
            mmd_every: 2500,
            sample_count: 1000,
            reference_count: 1000,
            sampler: SamplerKind::PfOde,
            reverse_steps: 1000,
            ode_tol: 1e-5,
            t_grid: (1..=20).map(|i| 0.5 * i as f64).collect(),
            elbo_count: 0,
        },
        diag: DiagConfig {
            kl_t: 5.0,
            t_grid: vec![0.5, 1.0, 2.5, 5.0, 7.5, 10.0],
            ..DiagConfig::default()
        },
    }
}
