//! Training, sampling, evaluation, and diagnostics runs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use local_dsm::eval::{bpd, kl_bound_mc, mean_error_diag, mmd_rbf, MetricRecord};
use local_dsm::generate::{pf_ode_sample, reverse_sde_sample, SamplerKind, SamplerSpec};
use local_dsm::model::{AdamW, ScoreFunction, ScoreModel};
use local_dsm::numcore::sde::{adaptive_sde_sample, AdaptiveSdeOptions};
use local_dsm::numcore::rng::stream_id;
use local_dsm::numcore::RngStream;
use local_dsm::objectives::Context;
use local_dsm::schedule::{ScheduleKind, ScheduleSpec};
use local_dsm::{DiffusionProcess, Error as CoreError, TimePairSchedule};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::output::{read_metrics, samples_file_name, write_samples, MetricsWriter, CONFIG_JSON, METRICS_JSONL};

const TAG_DATA: u64 = 0x6461_7461;
const TAG_INIT: u64 = 0x696e_6974;
const TAG_HOLDOUT: u64 = 0x686f_6c64;
const TAG_Y0: u64 = 0x7930_7930;
const TAG_REF: u64 = 0x7265_6673;
const TAG_SAMPLE: u64 = 0x736d_706c;
const TAG_DIAG_INPUTS: u64 = 0x6469_6e70;

/// Upper bound of MMD² for a kernel bounded by one, recorded for samples
/// that could not be generated.
const MMD_DIVERGED: f64 = 2.0;

/// Process, schedule, and config resolved for a run.
pub struct Setup {
    pub config: ExperimentConfig,
    pub hash: String,
    pub process: Box<dyn DiffusionProcess>,
    pub schedule: TimePairSchedule,
}

impl Setup {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let process = config.process.build()?;
        let schedule = TimePairSchedule::for_process(config.schedule.clone(), process.as_ref())?;
        Ok(Self {
            hash: config.hash(),
            config,
            process,
            schedule,
        })
    }

    pub fn seed(&self) -> u64 {
        self.config.train.seed
    }

    pub fn init_model(&self) -> Result<ScoreModel> {
        let mut rng = RngStream::derived(self.seed(), &[TAG_INIT]);
        Ok(ScoreModel::new(
            self.config.model.clone(),
            self.process.as_ref(),
            &self.schedule,
            &mut rng,
        )?)
    }

    /// Model restored from a checkpoint written by the same configuration.
    pub fn load_model(&self, ck: &Checkpoint) -> Result<ScoreModel> {
        if ck.config_hash != self.hash {
            bail!(
                "checkpoint config hash {} does not match the configuration ({})",
                ck.config_hash,
                self.hash
            );
        }
        let mut model = self.init_model()?;
        ck.restore(&mut model)?;
        Ok(model)
    }

    /// The checkpoint's parameter average when it has one, else its
    /// parameters.
    pub fn load_eval_model(&self, ck: &Checkpoint) -> Result<ScoreModel> {
        let mut model = self.load_model(ck)?;
        if let Some(ema) = &ck.ema {
            model.params_mut().copy_from_slice(ema);
        }
        Ok(model)
    }

    fn data_batch(&self, rng: &mut RngStream, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.config.data.sample_vec(rng)).collect()
    }

    fn write_config(&self, out: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Stamped<'a> {
            config_hash: &'a str,
            seed: u64,
            config: &'a ExperimentConfig,
        }
        let text = serde_json::to_string_pretty(&Stamped {
            config_hash: &self.hash,
            seed: self.seed(),
            config: &self.config,
        })?;
        std::fs::write(out.join(CONFIG_JSON), text)?;
        Ok(())
    }
}

/// Reads a `config.json` written by a run.
pub fn load_run_config(path: &Path) -> Result<ExperimentConfig> {
    let v: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
    )?;
    let inner = v.get("config").cloned().unwrap_or(v);
    Ok(serde_json::from_value(inner)?)
}

/// Samples and metrics of one evaluation.
pub struct Evaluation {
    pub records: Vec<MetricRecord>,
    pub snapshots: Vec<(f64, Array2<f64>)>,
}

/// Model-independent reference sets, drawn once per run.
pub struct Evaluator {
    /// Held-out data (reverse SDE) or forward-SDE snapshots (PF-ODE).
    reference: Vec<Array2<f64>>,
    y0: Option<Array2<f64>>,
    holdout: Vec<Vec<f64>>,
}

fn to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

fn column_variance(a: &Array2<f64>, j: usize) -> f64 {
    let n = a.nrows() as f64;
    let mean = a.column(j).sum() / n;
    a.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

impl Evaluator {
    pub fn new(setup: &Setup) -> Result<Self> {
        let cfg = &setup.config;
        let seed = setup.seed();
        let mut hold_rng = RngStream::derived(seed, &[TAG_HOLDOUT]);
        let holdout = setup.data_batch(&mut hold_rng, cfg.eval.elbo_count);
        match cfg.eval.sampler {
            SamplerKind::ReverseSde => {
                let reference = to_array(&setup.data_batch(&mut hold_rng, cfg.eval.reference_count));
                Ok(Self {
                    reference: vec![reference],
                    y0: None,
                    holdout,
                })
            }
            SamplerKind::PfOde => {
                let mut y0_rng = RngStream::derived(seed, &[TAG_Y0]);
                let y0 = to_array(&setup.data_batch(&mut y0_rng, cfg.eval.sample_count));
                let grid = &cfg.eval.t_grid;
                let sde = AdaptiveSdeOptions::default();
                let sde = &sde;
                let process = setup.process.as_ref();
                let paths: Vec<Vec<Vec<f64>>> = (0..cfg.eval.reference_count)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = RngStream::derived(seed, &[TAG_REF, i as u64]);
                        let mut y = cfg.data.sample_vec(&mut rng);
                        let mut t = 0.0;
                        let mut out = Vec::with_capacity(grid.len());
                        for &tk in grid {
                            if tk > t {
                                y = adaptive_sde_sample(process, &y, t, tk, sde, &mut rng)?;
                                t = tk;
                            }
                            out.push(y.clone());
                        }
                        Ok(out)
                    })
                    .collect::<Result<_, CoreError>>()?;
                let reference = (0..grid.len())
                    .map(|k| to_array(&paths.iter().map(|p| p[k].clone()).collect::<Vec<_>>()))
                    .collect();
                Ok(Self {
                    reference,
                    y0: Some(y0),
                    holdout,
                })
            }
        }
    }

    /// Draws model samples and scores them against the references.
    pub fn evaluate(&self, setup: &Setup, model: &dyn ScoreFunction, step: u64) -> Result<Evaluation> {
        let cfg = &setup.config;
        let process = setup.process.as_ref();
        let mut records = Vec::new();
        let snapshots = match cfg.eval.sampler {
            SamplerKind::ReverseSde => {
                let prior = cfg.prior.as_ref().context("reverse SDE needs a prior")?;
                let spec = SamplerSpec {
                    kind: SamplerKind::ReverseSde,
                    steps: cfg.eval.reverse_steps,
                    tol: cfg.eval.ode_tol,
                    t_max: cfg.objective.t_max,
                    delta: cfg.objective.delta,
                    denoise: true,
                    t_eval: vec![],
                    taylor_operator: cfg.taylor_operator,
                };
                let seed = stream_id(&[setup.seed(), TAG_SAMPLE, step]);
                let samples =
                    reverse_sde_sample(model, process, prior, &spec, cfg.eval.sample_count, seed).ok();
                records.push(mmd_record(samples.as_ref(), &self.reference[0], "reverse_sde", 0.0));
                samples.map(|s| vec![(0.0, s)]).unwrap_or_default()
            }
            SamplerKind::PfOde => {
                let y0 = self.y0.as_ref().expect("PF-ODE evaluator has y0");
                let grid = &cfg.eval.t_grid;
                let positive: Vec<f64> = grid.iter().copied().filter(|t| *t > 0.0).collect();
                let solved = pf_ode_sample(model, process, y0, 0.0, &positive, cfg.eval.ode_tol).ok();
                let mut snaps = Vec::new();
                let mut k_pos = 0;
                for (k, &t) in grid.iter().enumerate() {
                    let snap = if t > 0.0 {
                        k_pos += 1;
                        solved.as_ref().map(|s| s[k_pos - 1].clone())
                    } else {
                        Some(y0.clone())
                    };
                    records.push(mmd_record(snap.as_ref(), &self.reference[k], "pf_ode", t));
                    for j in 0..process.dim().min(2) {
                        if let Some(s) = &snap {
                            records.push(
                                MetricRecord::new(format!("var_dim{j}"), column_variance(s, j), None)
                                    .with_meta("source", "pf_ode")
                                    .with_meta("t", t),
                            );
                        }
                        records.push(
                            MetricRecord::new(format!("var_dim{j}"), column_variance(&self.reference[k], j), None)
                                .with_meta("source", "sde")
                                .with_meta("t", t),
                        );
                    }
                    if let Some(s) = snap {
                        snaps.push((t, s));
                    }
                }
                snaps
            }
        };
        let records = records.into_iter().map(|r| r.at_step(step)).collect();
        Ok(Evaluation { records, snapshots })
    }

    /// ELBO and bits per dimension on the held-out set.
    pub fn elbo(&self, setup: &Setup, model: &dyn ScoreFunction, step: u64) -> Result<Vec<MetricRecord>> {
        let cfg = &setup.config;
        let Some(prior) = cfg.prior.as_ref() else {
            return Ok(vec![]);
        };
        if self.holdout.is_empty() {
            return Ok(vec![]);
        }
        let spec = cfg.objective_spec();
        let ctx = Context::new(setup.process.as_ref(), &setup.schedule, &spec)?;
        let seed = stream_id(&[setup.seed(), TAG_HOLDOUT, step]);
        let est = ctx.elbo(model, prior, &self.holdout, seed)?;
        let d = setup.process.dim();
        Ok(vec![
            MetricRecord::new("elbo", est.value, Some(est.stderr)).at_step(step),
            MetricRecord::new("bpd", bpd(est.value, d), Some(est.stderr / (d as f64 * std::f64::consts::LN_2)))
                .at_step(step),
        ])
    }
}

fn finite_rows(a: &Array2<f64>) -> Array2<f64> {
    let keep: Vec<usize> = (0..a.nrows())
        .filter(|&i| a.row(i).iter().all(|v| v.is_finite()))
        .collect();
    Array2::from_shape_fn((keep.len(), a.ncols()), |(i, j)| a[(keep[i], j)])
}

fn mmd_record(samples: Option<&Array2<f64>>, reference: &Array2<f64>, sampler: &str, t: f64) -> MetricRecord {
    let finite = samples.map(finite_rows);
    let diverged = samples.map_or(0, |s| s.nrows()) - finite.as_ref().map_or(0, |f| f.nrows());
    let rec = match finite.as_ref().filter(|f| f.nrows() >= 2) {
        Some(f) => mmd_rbf(f, reference, None).ok(),
        None => None,
    };
    let rec = rec.unwrap_or_else(|| MetricRecord::new("mmd2", MMD_DIVERGED, None).with_meta("failed", true));
    rec.with_meta("sampler", sampler)
        .with_meta("t", t)
        .with_meta("diverged_rows", diverged as u64)
}

/// Result of [`run_train`].
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub model: ScoreModel,
    /// Model evaluated by the run: the parameter average when enabled.
    pub eval_model: ScoreModel,
    pub records: Vec<MetricRecord>,
    /// Last completed step.
    pub steps: u64,
    /// Time spent in optimization steps, excluding evaluation and I/O.
    pub train_seconds: f64,
}

/// Trains from scratch, or from `resume`, up to `train.steps`.
pub fn run_train(config: ExperimentConfig, out: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    let setup = Setup::new(config)?;
    let cfg = setup.config.clone();
    let seed = setup.seed();
    std::fs::create_dir_all(out)?;
    let (mut model, mut opt, mut data_rng, start, ema) = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let model = setup.load_model(&ck)?;
            let mut opt = ck.optimizer.clone();
            opt.config = cfg.train.adamw();
            (model, opt, RngStream::from_state(ck.rng_state), ck.step, ck.ema)
        }
        None => {
            let model = setup.init_model()?;
            let opt = AdamW::new(cfg.train.adamw(), model.num_params());
            (model, opt, RngStream::derived(seed, &[TAG_DATA]), 0, None)
        }
    };
    let mut ema = match (cfg.train.ema_decay, ema) {
        (None, _) => None,
        (Some(_), Some(e)) => Some(e),
        (Some(_), None) => Some(model.params().to_vec()),
    };
    let eval_model = |model: &ScoreModel, ema: &Option<Vec<f64>>| {
        let mut m = model.clone();
        if let Some(e) = ema {
            m.params_mut().copy_from_slice(e);
        }
        m
    };
    if start > cfg.train.steps {
        bail!("checkpoint step {start} is past train.steps = {}", cfg.train.steps);
    }
    setup.write_config(out)?;
    let mut writer = MetricsWriter::create(out, resume.is_some(), &setup.hash, seed, cfg.train.record_wall_time)?;
    let spec = cfg.objective_spec();
    let ctx = Context::new(setup.process.as_ref(), &setup.schedule, &spec)?;
    let evaluator = if cfg.eval.mmd_every > 0 && cfg.train.steps > start {
        Some(Evaluator::new(&setup)?)
    } else {
        None
    };
    let mut records = Vec::new();
    let save = |step: u64, model: &ScoreModel, opt: &AdamW, rng: &RngStream, ema: &Option<Vec<f64>>| -> Result<Checkpoint> {
        let ck = Checkpoint::capture(&setup.hash, seed, step, rng.state(), model, opt, ema.as_deref());
        ck.save(&out.join(Checkpoint::file_name(step)))?;
        Ok(ck)
    };
    let mut last = if start == cfg.train.steps {
        Some(save(start, &model, &opt, &data_rng, &ema)?)
    } else {
        None
    };
    let mut train_seconds = 0.0;
    let mut steps_done = start;
    for step in start + 1..=cfg.train.steps {
        let clock = Instant::now();
        let xs = setup.data_batch(&mut data_rng, cfg.train.batch);
        let est = ctx.loss_and_grad(&model, &xs, seed, step - 1)?;
        if !est.value.is_finite() || est.grad.iter().any(|g| !g.is_finite()) {
            let dump = out.join(format!("failure_step{step:08}.json"));
            std::fs::write(
                &dump,
                serde_json::to_string(&serde_json::json!({
                    "step": step,
                    "loss": est.value.to_string(),
                    "breakdown": format!("{:?}", est.breakdown),
                    "batch": xs,
                }))?,
            )?;
            bail!(
                "non-finite loss {} at step {step}; batch written to {}",
                est.value,
                dump.display()
            );
        }
        opt.step(model.params_mut(), &est.grad)?;
        if let (Some(e), Some(d)) = (ema.as_mut(), cfg.train.ema_decay) {
            let d = d.min((1 + step) as f64 / (10 + step) as f64);
            for (a, p) in e.iter_mut().zip(model.params()) {
                *a = d * *a + (1.0 - d) * p;
            }
        }
        train_seconds += clock.elapsed().as_secs_f64();
        steps_done = step;
        let out_of_time = cfg.train.time_budget_seconds.is_some_and(|b| train_seconds >= b);
        let rec = MetricRecord::new("loss", est.value, Some(est.stderr))
            .at_step(step)
            .with_meta("objective", serde_json::to_value(spec.kind)?);
        records.push(writer.write(rec)?);
        let at_end = step == cfg.train.steps || out_of_time;
        if let Some(ev) = &evaluator {
            if step % cfg.eval.mmd_every == 0 || at_end {
                let m = eval_model(&model, &ema);
                let e = ev.evaluate(&setup, &m, step)?;
                for r in e.records.into_iter().chain(ev.elbo(&setup, &m, step)?) {
                    records.push(writer.write(r)?);
                }
                writer.flush()?;
            }
        }
        if step % cfg.train.checkpoint_every == 0 || at_end {
            writer.flush()?;
            last = Some(save(step, &model, &opt, &data_rng, &ema)?);
        }
        if out_of_time {
            break;
        }
    }
    writer.flush()?;
    Ok(TrainOutcome {
        checkpoint: last.expect("final step is saved"),
        eval_model: eval_model(&model, &ema),
        model,
        records,
        steps: steps_done,
        train_seconds,
    })
}

/// Generates samples from a checkpoint and writes them to `out`.
pub fn run_sample(config: ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<PathBuf> {
    let setup = Setup::new(config)?;
    let ck = Checkpoint::load(checkpoint)?;
    let model = setup.load_eval_model(&ck)?;
    std::fs::create_dir_all(out)?;
    setup.write_config(out)?;
    let ev = Evaluator::new(&setup)?;
    let e = ev.evaluate(&setup, &model, ck.step)?;
    if e.snapshots.is_empty() {
        bail!("sampler failed to produce finite samples");
    }
    let kind = match setup.config.eval.sampler {
        SamplerKind::ReverseSde => "reverse_sde",
        SamplerKind::PfOde => "pf_ode",
    };
    let path = out.join(samples_file_name(kind, ck.step, setup.seed(), &setup.hash));
    let snaps: Vec<(f64, &Array2<f64>)> = e.snapshots.iter().map(|(t, a)| (*t, a)).collect();
    write_samples(&path, &snaps)?;
    Ok(path)
}

/// Scores a checkpoint and appends the records to `out/metrics.jsonl`.
pub fn run_eval(config: ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<Vec<MetricRecord>> {
    let setup = Setup::new(config)?;
    let ck = Checkpoint::load(checkpoint)?;
    let model = setup.load_eval_model(&ck)?;
    std::fs::create_dir_all(out)?;
    setup.write_config(out)?;
    let mut writer = MetricsWriter::create(out, true, &setup.hash, setup.seed(), setup.config.train.record_wall_time)?;
    let ev = Evaluator::new(&setup)?;
    let e = ev.evaluate(&setup, &model, ck.step)?;
    let mut records = Vec::new();
    for r in e.records.into_iter().chain(ev.elbo(&setup, &model, ck.step)?) {
        records.push(writer.write(r)?);
    }
    Ok(records)
}

/// Mean-error comparison of a λ schedule against a fixed gap, and the KL
/// bound over the λ grid.
pub fn run_diag(config: ExperimentConfig, out: &Path) -> Result<Vec<MetricRecord>> {
    let setup = Setup::new(config)?;
    let cfg = &setup.config;
    let d = &cfg.diag;
    let seed = setup.seed();
    let process = setup.process.as_ref();
    let op = cfg.taylor_operator;
    let sde = &cfg.objective.sde;
    std::fs::create_dir_all(out)?;
    setup.write_config(out)?;
    let mut writer = MetricsWriter::create(out, false, &setup.hash, seed, cfg.train.record_wall_time)?;
    let mut rng = RngStream::derived(seed, &[TAG_DIAG_INPUTS]);
    let xs = setup.data_batch(&mut rng, d.inputs.max(d.kl_inputs));
    let lambda_spec = |lambda: f64| ScheduleSpec {
        kind: match cfg.schedule.kind {
            ScheduleKind::FixedGap => ScheduleKind::LambdaNumeric,
            k => k,
        },
        lambda,
        ..cfg.schedule.clone()
    };
    let mut records = Vec::new();
    let lam = TimePairSchedule::for_process(lambda_spec(d.lambda), process)?;
    let gap = TimePairSchedule::for_process(ScheduleSpec::fixed_gap(d.gap), process)?;
    for (label, sched, param) in [("lambda", &lam, d.lambda), ("fixed_gap", &gap, d.gap)] {
        for r in mean_error_diag(process, op, sched, label, &xs[..d.inputs], &d.t_grid, sde, seed)? {
            records.push(writer.write(r.with_meta("param", param))?);
        }
    }
    for &lambda in &d.kl_lambdas {
        let sched = TimePairSchedule::for_process(lambda_spec(lambda), process)?;
        let s = sched.s(d.kl_t);
        match kl_bound_mc(process, op, &xs[..d.kl_inputs], s, d.kl_t, sde, d.kl_nodes, seed) {
            Ok(r) => {
                let r = r.with_meta("lambda", lambda).with_meta("s", s).with_meta("t", d.kl_t);
                records.push(writer.write(r)?);
            }
            Err(CoreError::Unsupported(msg)) => {
                eprintln!("skipping KL bound: {msg}");
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    writer.flush()?;
    Ok(records)
}

/// Reads the metrics of a finished run directory.
pub fn run_metrics(out: &Path) -> Result<Vec<MetricRecord>> {
    read_metrics(&out.join(METRICS_JSONL))
}
