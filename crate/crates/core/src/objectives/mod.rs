//! Training objectives and the local-DSM ELBO.

use nalgebra::DVector;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearize::{affine_map, forward_sample, local_sample, transition, TaylorOperator};
use crate::model::{ScoreFunction, ScoreModel};
use crate::numcore::matrix::Matrix;
use crate::numcore::rng::RngStream;
use crate::numcore::sde::AdaptiveSdeOptions;
use crate::processes::{DiffusionProcess, Prior};
use crate::schedule::TimePairSchedule;

pub const DEFAULT_DELTA: f64 = 1e-3;

const TAG_BATCH: u64 = 0x6f62_6a65;
const TAG_ELBO: u64 = 0x656c_626f;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    LocalDsmElbo,
    LocalDsmPerceptual,
    IsmElbo,
    ScoreMatching,
}

impl ObjectiveKind {
    fn uses_kernel(self) -> bool {
        !matches!(self, Self::IsmElbo)
    }
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_one() -> usize {
    1
}

fn default_t_max() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Time horizon `T`.
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_one")]
    pub mc_times: usize,
    #[serde(default = "default_one")]
    pub hutchinson_probes: usize,
    /// Stratifies the uniform time draws over the batch.
    #[serde(default)]
    pub stratified: bool,
    /// Pairs every kernel draw `ε` with `−ε`.
    #[serde(default)]
    pub antithetic: bool,
    pub taylor_operator: TaylorOperator,
    #[serde(default)]
    pub sde: AdaptiveSdeOptions,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind, taylor_operator: TaylorOperator, t_max: f64) -> Self {
        Self {
            kind,
            t_max,
            delta: DEFAULT_DELTA,
            mc_times: 1,
            hutchinson_probes: 1,
            stratified: false,
            antithetic: false,
            taylor_operator,
            sde: AdaptiveSdeOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.t_max > self.delta) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < delta < t_max, got delta {} and t_max {}",
                self.delta, self.t_max
            )));
        }
        if self.hutchinson_probes == 0 || self.mc_times == 0 {
            return Err(Error::InvalidParameter("probe and time counts must be ≥ 1".into()));
        }
        Ok(())
    }

    fn factor(&self) -> f64 {
        match self.kind {
            ObjectiveKind::LocalDsmPerceptual => 1.0,
            _ => self.t_max - self.delta,
        }
    }
}

/// Per-term decomposition; the fields always sum to the reported value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub prior: f64,
    pub score_matching: f64,
    pub transition_norm: f64,
    pub model_divergence: f64,
    pub drift_divergence: f64,
    pub reconstruction: f64,
}

impl Breakdown {
    pub fn total(&self) -> f64 {
        self.prior
            + self.score_matching
            + self.transition_norm
            + self.model_divergence
            + self.drift_divergence
            + self.reconstruction
    }

    fn scaled(&self, k: f64) -> Self {
        Self {
            prior: self.prior * k,
            score_matching: self.score_matching * k,
            transition_norm: self.transition_norm * k,
            model_divergence: self.model_divergence * k,
            drift_divergence: self.drift_divergence * k,
            reconstruction: self.reconstruction * k,
        }
    }

    fn add(&mut self, o: &Self) {
        self.prior += o.prior;
        self.score_matching += o.score_matching;
        self.transition_norm += o.transition_norm;
        self.model_divergence += o.model_divergence;
        self.drift_divergence += o.drift_divergence;
        self.reconstruction += o.reconstruction;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEstimate {
    /// Mean over samples.
    pub value: f64,
    /// Standard error of `value` across samples.
    pub stderr: f64,
    pub breakdown: Breakdown,
    pub per_sample: Vec<f64>,
    /// Parameter gradient of `value`; empty when not requested.
    pub grad: Vec<f64>,
}

/// Where each sample's time (and optionally its pair `s`) comes from.
#[derive(Debug, Clone, Copy)]
pub enum Times<'a> {
    /// `t ~ U(δ, T]`, with `s` from the schedule.
    Uniform,
    /// Fixed `t` per sample, with `s` from the schedule.
    At(&'a [f64]),
    /// Fixed `(s, t)` per sample.
    Pairs(&'a [(f64, f64)]),
}

#[derive(Debug, Clone)]
struct Row {
    sample: usize,
    weight: f64,
    y: Vec<f64>,
    t: f64,
    gg: Vec<f64>,
    divf: f64,
    target: Vec<f64>,
    eps: Vec<f64>,
    root: Option<Matrix>,
    probes: Vec<Vec<f64>>,
}

/// Model-independent draws for one objective evaluation.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    kind: ObjectiveKind,
    samples: usize,
    rows: Vec<Row>,
}

impl PreparedBatch {
    pub fn len(&self) -> usize {
        self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    pub fn states(&self) -> (Array2<f64>, Vec<f64>) {
        let d = self.rows.first().map_or(0, |r| r.y.len());
        let ys = Array2::from_shape_fn((self.rows.len(), d), |(i, j)| self.rows[i].y[j]);
        (ys, self.rows.iter().map(|r| r.t).collect())
    }
}

/// Process, schedule, and objective settings shared by all evaluations.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub process: &'a dyn DiffusionProcess,
    pub schedule: &'a TimePairSchedule,
    pub spec: &'a ObjectiveSpec,
}

impl<'a> Context<'a> {
    pub fn new(
        process: &'a dyn DiffusionProcess,
        schedule: &'a TimePairSchedule,
        spec: &'a ObjectiveSpec,
    ) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            process,
            schedule,
            spec,
        })
    }

    fn draw_time(&self, u: f64) -> f64 {
        let s = self.spec;
        s.delta + (s.t_max - s.delta) * (1.0 - u)
    }

    fn rows_for(
        &self,
        sample: usize,
        x: &[f64],
        s: Option<f64>,
        t: f64,
        rng: &mut RngStream,
    ) -> Result<Vec<Row>> {
        let p = self.process;
        let gg = p.diffusion_sq_vec(t);
        if !self.spec.kind.uses_kernel() {
            let y = forward_sample(p, x, t, &self.spec.sde, rng)?;
            let probes = (0..self.spec.hutchinson_probes)
                .map(|_| (0..x.len()).map(|_| rng.rademacher()).collect())
                .collect();
            let divf = p.drift_divergence(&y, t);
            return Ok(vec![Row {
                sample,
                weight: 1.0,
                y,
                t,
                gg,
                divf,
                target: Vec::new(),
                eps: Vec::new(),
                root: None,
                probes,
            }]);
        }
        let s = s.unwrap_or_else(|| self.schedule.s(t));
        let ls = local_sample(p, self.spec.taylor_operator, x, s, t, &self.spec.sde, rng)?;
        let root = Some(ls.kernel.root.clone());
        let mut rows = vec![Row {
            sample,
            weight: 1.0,
            divf: p.drift_divergence(&ls.y_t, t),
            y: ls.y_t,
            t,
            gg: gg.clone(),
            target: ls.score,
            eps: ls.eps,
            root: root.clone(),
            probes: Vec::new(),
        }];
        if self.spec.antithetic {
            let eps: Vec<f64> = rows[0].eps.iter().map(|v| -v).collect();
            let y = ls.kernel.apply(&eps);
            rows[0].weight = 0.5;
            rows.push(Row {
                sample,
                weight: 0.5,
                divf: p.drift_divergence(&y, t),
                y,
                t,
                gg,
                target: rows[0].target.iter().map(|v| -v).collect(),
                eps,
                root,
                probes: Vec::new(),
            });
        }
        Ok(rows)
    }

    /// Draws times, states, kernel scores and probes for each row of `xs`.
    ///
    /// Sample `i` uses the stream `(seed, tag, step, i)`, so batches are
    /// reproducible and independent of thread count.
    pub fn prepare(
        &self,
        xs: &[Vec<f64>],
        times: Times<'_>,
        seed: u64,
        step: u64,
    ) -> Result<PreparedBatch> {
        let n = xs.len();
        match times {
            Times::At(ts) if ts.len() != n => {
                return Err(Error::ShapeMismatch("times per sample".into()))
            }
            Times::Pairs(ps) if ps.len() != n => {
                return Err(Error::ShapeMismatch("pairs per sample".into()))
            }
            _ => {}
        }
        let per: Vec<Vec<Row>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = RngStream::derived(seed, &[TAG_BATCH, step, i as u64]);
                let (s, t) = match times {
                    Times::Uniform => {
                        let u = rng.uniform();
                        let u = if self.spec.stratified {
                            (i as f64 + u) / n as f64
                        } else {
                            u
                        };
                        (None, self.draw_time(u))
                    }
                    Times::At(ts) => (None, ts[i]),
                    Times::Pairs(ps) => (Some(ps[i].0), ps[i].1),
                };
                self.rows_for(i, &xs[i], s, t, &mut rng)
            })
            .collect::<Result<_>>()?;
        Ok(PreparedBatch {
            kind: self.spec.kind,
            samples: n,
            rows: per.into_iter().flatten().collect(),
        })
    }

    /// Value of the objective for a fixed batch.
    pub fn evaluate(&self, batch: &PreparedBatch, score: &dyn ScoreFunction) -> Result<LossEstimate> {
        let (ys, ts) = batch.states();
        let outs = if batch.kind == ObjectiveKind::IsmElbo {
            self.probe_passes(batch, &ys, |v| score.score_jvp(&ys, &ts, v))?
        } else {
            vec![(score.score(&ys, &ts)?, None)]
        };
        let (est, _, _) = self.assemble(batch, &outs)?;
        Ok(est)
    }

    /// Value and parameter gradient for a fixed batch.
    pub fn evaluate_with_grad(
        &self,
        batch: &PreparedBatch,
        model: &ScoreModel,
    ) -> Result<LossEstimate> {
        let (ys, ts) = batch.states();
        let mut grad = vec![0.0; model.num_params()];
        if batch.kind == ObjectiveKind::IsmElbo {
            let mut caches = Vec::new();
            let outs = self.probe_passes(batch, &ys, |v| {
                let (o, j, c) = model.forward_jvp(&ys, &ts, v)?;
                caches.push(c);
                Ok((o, j))
            })?;
            let (mut est, g_out, g_jvp) = self.assemble(batch, &outs)?;
            for (k, cache) in caches.iter().enumerate() {
                let go = if k == 0 {
                    g_out.clone()
                } else {
                    Array2::zeros(g_out.dim())
                };
                model.backward(cache, &go, Some(&g_jvp[k]), &mut grad)?;
            }
            est.grad = grad;
            Ok(est)
        } else {
            let (o, cache) = model.forward(&ys, &ts)?;
            let (mut est, g_out, _) = self.assemble(batch, &[(o, None)])?;
            model.backward(&cache, &g_out, None, &mut grad)?;
            est.grad = grad;
            Ok(est)
        }
    }

    fn probe_passes<F>(
        &self,
        batch: &PreparedBatch,
        ys: &Array2<f64>,
        mut pass: F,
    ) -> Result<Vec<(Array2<f64>, Option<(Array2<f64>, Array2<f64>)>)>>
    where
        F: FnMut(&Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)>,
    {
        let probes = batch.rows.first().map_or(0, |r| r.probes.len());
        let mut outs = Vec::with_capacity(probes);
        for k in 0..probes {
            let v = Array2::from_shape_fn(ys.dim(), |(i, j)| batch.rows[i].probes[k][j]);
            let (o, jv) = pass(&v)?;
            outs.push((o, Some((v, jv))));
        }
        Ok(outs)
    }

    /// Combines model outputs with the prepared draws. Returns the estimate
    /// and the upstream gradients for the score outputs and each probe's
    /// directional derivative.
    #[allow(clippy::type_complexity)]
    fn assemble(
        &self,
        batch: &PreparedBatch,
        outs: &[(Array2<f64>, Option<(Array2<f64>, Array2<f64>)>)],
    ) -> Result<(LossEstimate, Array2<f64>, Vec<Array2<f64>>)> {
        let u = &outs[0].0;
        let (nr, d) = u.dim();
        let n = batch.samples as f64;
        let factor = self.spec.factor();
        let mut g_out = Array2::zeros((nr, d));
        let mut g_jvp: Vec<Array2<f64>> = outs.iter().map(|_| Array2::zeros((nr, d))).collect();
        let mut per_sample = vec![0.0; batch.samples];
        let mut terms = vec![Breakdown::default(); batch.samples];
        let probes = outs.len() as f64;
        for (r, row) in batch.rows.iter().enumerate() {
            let w = row.weight;
            let up = w * factor / n;
            let mut b = Breakdown::default();
            match batch.kind {
                ObjectiveKind::LocalDsmElbo | ObjectiveKind::ScoreMatching => {
                    for j in 0..d {
                        let diff = u[(r, j)] - row.target[j];
                        b.score_matching += 0.5 * row.gg[j] * diff * diff;
                        g_out[(r, j)] = up * row.gg[j] * diff;
                    }
                    if batch.kind == ObjectiveKind::LocalDsmElbo {
                        b.transition_norm = -0.5
                            * (0..d)
                                .map(|j| row.gg[j] * row.target[j] * row.target[j])
                                .sum::<f64>();
                        b.drift_divergence = -row.divf;
                    }
                }
                ObjectiveKind::LocalDsmPerceptual => {
                    let root = row.root.as_ref().unwrap();
                    let res: Vec<f64> = (0..d)
                        .map(|i| (0..d).map(|k| root[(i, k)] * u[(r, k)]).sum::<f64>() + row.eps[i])
                        .collect();
                    b.score_matching = (0..d).map(|i| row.gg[i] * res[i] * res[i]).sum();
                    for k in 0..d {
                        g_out[(r, k)] =
                            up * 2.0 * (0..d).map(|i| root[(i, k)] * row.gg[i] * res[i]).sum::<f64>();
                    }
                }
                ObjectiveKind::IsmElbo => {
                    for j in 0..d {
                        b.score_matching += 0.5 * row.gg[j] * u[(r, j)] * u[(r, j)];
                        g_out[(r, j)] = up * row.gg[j] * u[(r, j)];
                    }
                    for (k, (_, tan)) in outs.iter().enumerate() {
                        let (v, jv) = tan.as_ref().unwrap();
                        for j in 0..d {
                            b.model_divergence += row.gg[j] * v[(r, j)] * jv[(r, j)] / probes;
                            g_jvp[k][(r, j)] = up * row.gg[j] * v[(r, j)] / probes;
                        }
                    }
                    b.drift_divergence = -row.divf;
                }
            }
            let b = b.scaled(w * factor);
            per_sample[row.sample] += b.total();
            terms[row.sample].add(&b);
        }
        let mut breakdown = Breakdown::default();
        for t in &terms {
            breakdown.add(&t.scaled(1.0 / n));
        }
        let (value, stderr) = mean_stderr(&per_sample);
        if !value.is_finite() {
            return Err(Error::NonFinite("objective value"));
        }
        Ok((
            LossEstimate {
                value,
                stderr,
                breakdown,
                per_sample,
                grad: Vec::new(),
            },
            g_out,
            g_jvp,
        ))
    }

    /// Draws a batch and evaluates value and gradient in one call.
    pub fn loss_and_grad(
        &self,
        model: &ScoreModel,
        xs: &[Vec<f64>],
        seed: u64,
        step: u64,
    ) -> Result<LossEstimate> {
        let batch = self.prepare(xs, Times::Uniform, seed, step)?;
        self.evaluate_with_grad(&batch, model)
    }

    /// Local-DSM ELBO with the truncated-time reconstruction term.
    ///
    /// Each of `mc_times` draws per input uses an independent `t`, terminal
    /// state `y_T`, and reconstruction sample.
    pub fn elbo(
        &self,
        score: &dyn ScoreFunction,
        prior: &Prior,
        xs: &[Vec<f64>],
        seed: u64,
    ) -> Result<LossEstimate> {
        let p = self.process;
        let spec = self.spec;
        let mc = spec.mc_times;
        let op = spec.taylor_operator;
        let dsm_spec = ObjectiveSpec {
            kind: ObjectiveKind::LocalDsmElbo,
            ..spec.clone()
        };
        let dsm = Context {
            spec: &dsm_spec,
            ..*self
        };
        struct Draw {
            rows: Vec<Row>,
            prior: f64,
            x: Vec<f64>,
            y_delta: Vec<f64>,
            log_q: f64,
            phi: Matrix,
            c: Vec<f64>,
            cov: Matrix,
        }
        let draws: Vec<Draw> = (0..xs.len() * mc)
            .into_par_iter()
            .map(|k| {
                let x = &xs[k / mc];
                let mut rng = RngStream::derived(seed, &[TAG_ELBO, k as u64]);
                let y_t_end = forward_sample(p, x, spec.t_max, &spec.sde, &mut rng)?;
                let prior = prior.log_density(&y_t_end);
                let t = dsm.draw_time(rng.uniform());
                let rows = dsm.rows_for(k, x, None, t, &mut rng)?;
                let kernel = transition(p, op, x, 0.0, spec.delta)?;
                let (y_delta, _) = kernel.sample(&mut rng);
                let log_q = kernel.log_density(&y_delta)?;
                let (phi, c) = affine_map(p, op, x, 0.0, spec.delta)?;
                Ok(Draw {
                    rows,
                    prior,
                    x: x.clone(),
                    y_delta,
                    log_q,
                    phi,
                    c,
                    cov: kernel.cov,
                })
            })
            .collect::<Result<_>>()?;
        let total = draws.len();
        let batch = PreparedBatch {
            kind: ObjectiveKind::LocalDsmElbo,
            samples: total,
            rows: draws.iter().flat_map(|d| d.rows.clone()).collect(),
        };
        let local = dsm.evaluate(&batch, score)?;
        let d = p.dim();
        let yd = Array2::from_shape_fn((total, d), |(i, j)| draws[i].y_delta[j]);
        let sd = score.score(&yd, &vec![spec.delta; total])?;
        let mut per_sample = vec![0.0; total];
        let mut breakdown = local.breakdown.scaled(-1.0);
        let mut prior_sum = 0.0;
        let mut recon_sum = 0.0;
        for (i, dr) in draws.iter().enumerate() {
            let s_row: Vec<f64> = (0..d).map(|j| sd[(i, j)]).collect();
            let rec = tweedie_log_density(&dr.phi, &dr.c, &dr.cov, &dr.y_delta, &s_row, &dr.x)?
                - dr.log_q;
            per_sample[i] = dr.prior - local.per_sample[i] + rec;
            prior_sum += dr.prior;
            recon_sum += rec;
        }
        breakdown.prior = prior_sum / total as f64;
        breakdown.reconstruction = recon_sum / total as f64;
        let (value, stderr) = mean_stderr(&per_sample);
        Ok(LossEstimate {
            value,
            stderr,
            breakdown,
            per_sample,
            grad: Vec::new(),
        })
    }
}

/// `log N(x; Φ⁻¹(y − c) + Φ⁻¹P·s, Φ⁻¹PΦ⁻ᵀ)`.
pub fn tweedie_log_density(
    phi: &Matrix,
    c: &[f64],
    cov: &Matrix,
    y: &[f64],
    score: &[f64],
    x: &[f64],
) -> Result<f64> {
    let d = y.len();
    let lu = phi.clone().lu();
    let rhs = DVector::from_fn(d, |i, _| {
        y[i] - c[i] + (0..d).map(|k| cov[(i, k)] * score[k]).sum::<f64>()
    });
    let mean = lu.solve(&rhs).ok_or(Error::Singular("Tweedie map"))?;
    let phi_inv = lu.try_inverse().ok_or(Error::Singular("Tweedie map"))?;
    let sigma = &phi_inv * cov * phi_inv.transpose();
    let sigma = crate::numcore::matrix::symmetrize(&sigma);
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or(Error::NotPsd(sigma.symmetric_eigenvalues().min()))?;
    let diff = DVector::from_fn(d, |i, _| x[i] - mean[i]);
    let z = chol.l().solve_lower_triangular(&diff).ok_or(Error::Singular("Tweedie covariance"))?;
    let logdet: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok(-0.5 * (z.norm_squared() + logdet + d as f64 * (2.0 * std::f64::consts::PI).ln()))
}

/// Sample mean and its standard error.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Single-draw local-DSM integrand at `(x, t)`.
pub fn local_dsm_term(
    score: &dyn ScoreFunction,
    ctx: &Context<'_>,
    x: &[f64],
    t: f64,
    rng: &mut RngStream,
) -> Result<LossEstimate> {
    single(score, ctx, ObjectiveKind::LocalDsmElbo, x, t, rng)
}

/// Single-draw ISM integrand at `(x, t)` with Hutchinson probes.
pub fn ism_term(
    score: &dyn ScoreFunction,
    ctx: &Context<'_>,
    x: &[f64],
    t: f64,
    rng: &mut RngStream,
) -> Result<LossEstimate> {
    single(score, ctx, ObjectiveKind::IsmElbo, x, t, rng)
}

/// Single-draw `‖(σ/γ)ε_θ − ε‖²_{ggᵀ}`.
pub fn perceptual_loss(
    score: &dyn ScoreFunction,
    ctx: &Context<'_>,
    x: &[f64],
    t: f64,
    rng: &mut RngStream,
) -> Result<LossEstimate> {
    single(score, ctx, ObjectiveKind::LocalDsmPerceptual, x, t, rng)
}

/// Single-draw `½‖s_θ − ∇log q̂‖²_{ggᵀ}`.
pub fn score_matching_loss(
    score: &dyn ScoreFunction,
    ctx: &Context<'_>,
    x: &[f64],
    t: f64,
    rng: &mut RngStream,
) -> Result<LossEstimate> {
    single(score, ctx, ObjectiveKind::ScoreMatching, x, t, rng)
}

fn single(
    score: &dyn ScoreFunction,
    ctx: &Context<'_>,
    kind: ObjectiveKind,
    x: &[f64],
    t: f64,
    rng: &mut RngStream,
) -> Result<LossEstimate> {
    let spec = ObjectiveSpec {
        kind,
        antithetic: false,
        ..ctx.spec.clone()
    };
    let c = Context {
        spec: &spec,
        ..*ctx
    };
    let rows = c.rows_for(0, x, None, t, rng)?;
    let batch = PreparedBatch {
        kind,
        samples: 1,
        rows,
    };
    let mut est = c.evaluate(&batch, score)?;
    // Report the bare integrand, without the time-horizon factor.
    let f = spec.factor();
    est.value /= f;
    est.per_sample.iter_mut().for_each(|v| *v /= f);
    est.breakdown = est.breakdown.scaled(1.0 / f);
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearScore;
    use crate::processes::{BetaSchedule, Langevin, VpSde};
    use crate::schedule::{ScheduleKind, ScheduleSpec};

    fn ou() -> Langevin {
        Langevin::new(1, Prior::standard_normal(), BetaSchedule::Constant { beta: 1.0 }).unwrap()
    }

    fn sched(p: &dyn DiffusionProcess) -> TimePairSchedule {
        TimePairSchedule::for_process(ScheduleSpec::lambda(ScheduleKind::LambdaNumeric, 0.05), p)
            .unwrap()
    }

    #[test]
    fn matched_score_has_zero_matching_term() {
        let p = ou();
        let sch = sched(&p);
        let spec = ObjectiveSpec::new(ObjectiveKind::LocalDsmElbo, TaylorOperator::St, 1.0);
        let ctx = Context::new(&p, &sch, &spec).unwrap();
        let batch = ctx.prepare(&[vec![0.3]], Times::At(&[0.7]), 1, 0).unwrap();
        let row = &batch.rows[0];
        let sig = row.root.as_ref().unwrap()[(0, 0)];
        let mean = row.y[0] - sig * row.eps[0];
        let exact = LinearScore::new(1, move |_| (vec![-1.0 / (sig * sig)], vec![mean / (sig * sig)]));
        let est = ctx.evaluate(&batch, &exact).unwrap();
        assert!(est.breakdown.score_matching.abs() < 1e-20);
        assert!((est.breakdown.total() - est.value).abs() < 1e-12);
    }

    #[test]
    fn zero_score_perceptual_is_weighted_noise_norm() {
        let p = Langevin::new(2, Prior::Logistic, BetaSchedule::linear(0.1, 10.0)).unwrap();
        let sch = sched(&p);
        let spec = ObjectiveSpec::new(ObjectiveKind::LocalDsmPerceptual, TaylorOperator::St, 1.0);
        let ctx = Context::new(&p, &sch, &spec).unwrap();
        let zero = LinearScore::new(2, |_| (vec![0.0; 2], vec![0.0; 2]));
        let xs: Vec<Vec<f64>> = (0..4000).map(|_| vec![0.0, 0.0]).collect();
        let ts = vec![0.5; xs.len()];
        let batch = ctx.prepare(&xs, Times::At(&ts), 3, 0).unwrap();
        let est = ctx.evaluate(&batch, &zero).unwrap();
        let trace: f64 = p.diffusion_sq_vec(0.5).iter().sum();
        assert!((est.value - trace).abs() < 4.0 * est.stderr);
    }

    #[test]
    fn vp_tweedie_mean_is_posterior_mean() {
        let p = VpSde::new(1, 1.0, 1.0).unwrap();
        let (phi, c) = affine_map(&p, TaylorOperator::Ss, &[0.0], 0.0, 0.5).unwrap();
        let k = transition(&p, TaylorOperator::Ss, &[0.0], 0.0, 0.5).unwrap();
        let y = [0.8];
        // Stationary data: s(y) = −y, posterior N(Φy, P).
        let post_mean = phi[(0, 0)] * y[0];
        let peak = tweedie_log_density(&phi, &c, &k.cov, &y, &[-y[0]], &[post_mean]).unwrap();
        let off = tweedie_log_density(&phi, &c, &k.cov, &y, &[-y[0]], &[post_mean + 0.1]).unwrap();
        assert!(peak > off);
    }

    #[test]
    fn identity_dynamics_tweedie_mean() {
        let phi = Matrix::identity(2, 2);
        let cov = Matrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        let y = [1.0, -1.0];
        let s = [0.4, 0.2];
        let mean = [1.2, -0.9];
        let at_mean = tweedie_log_density(&phi, &[0.0, 0.0], &cov, &y, &s, &mean).unwrap();
        let expected = -(2.0 * std::f64::consts::PI * 0.5).ln();
        assert!((at_mean - expected).abs() < 1e-12);
    }
}
