//! Score networks, the ε-parameterization, and the AdamW optimizer.

mod adamw;
mod mlp;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

pub use adamw::{AdamW, AdamWConfig};
pub use mlp::{time_input, Init, Mlp, MlpCache};

use crate::error::{Error, Result};
use crate::numcore::rng::RngStream;
use crate::processes::{BetaSchedule, DiffusionProcess};
use crate::schedule::TimePairSchedule;

/// A batched score `s(y, t)` with directional derivatives.
pub trait ScoreFunction: Sync {
    fn dim(&self) -> usize;

    /// Scores for each row of `ys` at the matching time in `ts`.
    fn score(&self, ys: &Array2<f64>, ts: &[f64]) -> Result<Array2<f64>>;

    /// Scores together with `∂s/∂y · v` for each row.
    fn score_jvp(
        &self,
        ys: &Array2<f64>,
        ts: &[f64],
        vs: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)>;
}

/// `s(y, t) = M(t)·y + b(t)` with diagonal `M`.
pub struct LinearScore<F>
where
    F: Fn(f64) -> (Vec<f64>, Vec<f64>) + Sync,
{
    dim: usize,
    coeffs: F,
}

impl<F> LinearScore<F>
where
    F: Fn(f64) -> (Vec<f64>, Vec<f64>) + Sync,
{
    /// `coeffs(t)` returns the diagonal of `M(t)` and the offset `b(t)`.
    pub fn new(dim: usize, coeffs: F) -> Self {
        Self { dim, coeffs }
    }
}

impl<F> ScoreFunction for LinearScore<F>
where
    F: Fn(f64) -> (Vec<f64>, Vec<f64>) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, ys: &Array2<f64>, ts: &[f64]) -> Result<Array2<f64>> {
        Ok(self.score_jvp(ys, ts, &Array2::zeros(ys.dim()))?.0)
    }

    fn score_jvp(
        &self,
        ys: &Array2<f64>,
        ts: &[f64],
        vs: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let mut out = Array2::zeros(ys.dim());
        let mut jv = Array2::zeros(ys.dim());
        for (i, &t) in ts.iter().enumerate() {
            let (m, b) = (self.coeffs)(t);
            for j in 0..self.dim {
                out[(i, j)] = m[j] * ys[(i, j)] + b[j];
                jv[(i, j)] = m[j] * vs[(i, j)];
            }
        }
        Ok((out, jv))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// The network output is the score.
    #[default]
    DirectScore,
    /// The network predicts `ε_θ` and `s_θ = −ε_θ/γ(t, s(t))`.
    Epsilon,
}

fn default_hidden() -> Vec<usize> {
    vec![256, 256, 256]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Number of sinusoidal time frequencies appended to the raw time input.
    #[serde(default)]
    pub time_features: usize,
    #[serde(default)]
    pub parameterization: Parameterization,
    /// Wraps the network as `(net(y) − net(−y))/2`.
    #[serde(default)]
    pub odd: bool,
    #[serde(default = "default_true")]
    pub zero_output_init: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            time_features: 0,
            parameterization: Parameterization::DirectScore,
            odd: false,
            zero_output_init: true,
        }
    }
}

/// `γ(t, s) = √(1 − exp(−2∫_s^t β))`.
pub fn gamma_from_beta(beta: &BetaSchedule, s: f64, t: f64) -> f64 {
    (-(-2.0 * beta.integral(s, t)).exp_m1()).max(0.0).sqrt()
}

/// `γ(t, s)` for a drift of the form `β(t)·h(y)`.
pub fn gamma(process: &dyn DiffusionProcess, s: f64, t: f64) -> Result<f64> {
    let beta = process.drift_scale().ok_or_else(|| {
        Error::Unsupported("γ(t, s) needs a drift of the form β(t)·h(y)".into())
    })?;
    Ok(gamma_from_beta(&beta, s, t))
}

#[derive(Debug, Clone)]
enum OutputScale {
    Identity,
    InverseGamma {
        beta: BetaSchedule,
        schedule: TimePairSchedule,
    },
}

/// Cached state of a [`ScoreModel`] forward pass.
#[derive(Debug, Clone)]
pub struct ScoreCache {
    mlp: MlpCache,
    scales: Vec<f64>,
    rows: usize,
}

/// An MLP score model with optional ε-parameterization and odd symmetry.
#[derive(Debug, Clone)]
pub struct ScoreModel {
    spec: ModelSpec,
    dim: usize,
    mlp: Mlp,
    scale: OutputScale,
}

impl ScoreModel {
    /// Builds a freshly initialized model. `process` and `schedule` are used
    /// only by the ε-parameterization.
    pub fn new(
        spec: ModelSpec,
        process: &dyn DiffusionProcess,
        schedule: &TimePairSchedule,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let dim = process.dim();
        let mut widths = vec![dim + 1 + 2 * spec.time_features];
        widths.extend(&spec.hidden);
        widths.push(dim);
        let init = if spec.zero_output_init {
            Init::ZeroHead
        } else {
            Init::Random
        };
        let mlp = Mlp::new(&widths, init, rng)?;
        Self::with_mlp(spec, process, schedule, mlp)
    }

    pub fn with_mlp(
        spec: ModelSpec,
        process: &dyn DiffusionProcess,
        schedule: &TimePairSchedule,
        mlp: Mlp,
    ) -> Result<Self> {
        let dim = process.dim();
        if mlp.input_dim() != dim + 1 + 2 * spec.time_features || mlp.output_dim() != dim {
            return Err(Error::ShapeMismatch(format!(
                "network widths {:?} for dimension {dim}",
                mlp.widths()
            )));
        }
        let scale = match spec.parameterization {
            Parameterization::DirectScore => OutputScale::Identity,
            Parameterization::Epsilon => OutputScale::InverseGamma {
                beta: process.drift_scale().ok_or_else(|| {
                    Error::Unsupported(
                        "epsilon parameterization needs a drift of the form β(t)·h(y)".into(),
                    )
                })?,
                schedule: schedule.clone(),
            },
        };
        Ok(Self {
            spec,
            dim,
            mlp,
            scale,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn params(&self) -> &[f64] {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.mlp.params_mut()
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    /// Schedule used by the ε-parameterization.
    pub fn scale_schedule(&self) -> Option<&TimePairSchedule> {
        match &self.scale {
            OutputScale::Identity => None,
            OutputScale::InverseGamma { schedule, .. } => Some(schedule),
        }
    }

    /// Output multiplier at time `t`: 1, or `−1/γ(t, s(t))`.
    pub fn output_scale(&self, t: f64) -> f64 {
        match &self.scale {
            OutputScale::Identity => 1.0,
            OutputScale::InverseGamma { beta, schedule } => {
                -1.0 / gamma_from_beta(beta, schedule.s(t), t).max(f64::MIN_POSITIVE)
            }
        }
    }

    fn inputs(&self, ys: &Array2<f64>, ts: &[f64]) -> Array2<f64> {
        if self.spec.odd {
            let neg = ys.mapv(|v| -v);
            let stacked = ndarray::concatenate(Axis(0), &[ys.view(), neg.view()]).unwrap();
            let tt: Vec<f64> = ts.iter().chain(ts).copied().collect();
            time_input(&stacked, &tt, self.spec.time_features)
        } else {
            time_input(ys, ts, self.spec.time_features)
        }
    }

    fn combine(&self, raw: &Array2<f64>, scales: &[f64], rows: usize) -> Array2<f64> {
        let mut out = if self.spec.odd {
            let a = raw.slice(s![..rows, ..]);
            let b = raw.slice(s![rows.., ..]);
            (&a - &b) * 0.5
        } else {
            raw.clone()
        };
        for (mut row, &c) in out.outer_iter_mut().zip(scales) {
            row *= c;
        }
        out
    }

    fn check(&self, ys: &Array2<f64>, ts: &[f64]) -> Result<()> {
        if ys.ncols() != self.dim || ys.nrows() != ts.len() {
            return Err(Error::ShapeMismatch(format!(
                "batch {:?} with {} times for dimension {}",
                ys.dim(),
                ts.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Scores and the cache needed by [`ScoreModel::backward`].
    pub fn forward(&self, ys: &Array2<f64>, ts: &[f64]) -> Result<(Array2<f64>, ScoreCache)> {
        self.check(ys, ts)?;
        let scales: Vec<f64> = ts.iter().map(|&t| self.output_scale(t)).collect();
        let (raw, mlp) = self.mlp.forward(&self.inputs(ys, ts))?;
        let out = self.combine(&raw, &scales, ys.nrows());
        Ok((
            out,
            ScoreCache {
                mlp,
                scales,
                rows: ys.nrows(),
            },
        ))
    }

    /// Scores, `∂s/∂y · v`, and the cache.
    pub fn forward_jvp(
        &self,
        ys: &Array2<f64>,
        ts: &[f64],
        vs: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, ScoreCache)> {
        self.check(ys, ts)?;
        if vs.dim() != ys.dim() {
            return Err(Error::ShapeMismatch("direction shape".into()));
        }
        let scales: Vec<f64> = ts.iter().map(|&t| self.output_scale(t)).collect();
        let x = self.inputs(ys, ts);
        let dirs = if self.spec.odd {
            let neg = vs.mapv(|v| -v);
            ndarray::concatenate(Axis(0), &[vs.view(), neg.view()]).unwrap()
        } else {
            vs.clone()
        };
        let mut dx = Array2::zeros(x.dim());
        dx.slice_mut(s![.., ..self.dim]).assign(&dirs);
        let (raw, raw_t, mlp) = self.mlp.forward_tangent(&x, &dx)?;
        let rows = ys.nrows();
        let out = self.combine(&raw, &scales, rows);
        let jv = self.combine(&raw_t, &scales, rows);
        Ok((out, jv, ScoreCache { mlp, scales, rows }))
    }

    fn spread(&self, g: &Array2<f64>, cache: &ScoreCache) -> Array2<f64> {
        let mut g = g.clone();
        for (mut row, &c) in g.outer_iter_mut().zip(&cache.scales) {
            row *= c;
        }
        if self.spec.odd {
            let half = &g * 0.5;
            let neg = &g * -0.5;
            ndarray::concatenate(Axis(0), &[half.view(), neg.view()]).unwrap()
        } else {
            g
        }
    }

    /// Parameter gradient of `⟨s, g_out⟩ + ⟨∂s/∂y·v, g_jvp⟩`, accumulated
    /// into `grad`.
    pub fn backward(
        &self,
        cache: &ScoreCache,
        g_out: &Array2<f64>,
        g_jvp: Option<&Array2<f64>>,
        grad: &mut [f64],
    ) -> Result<()> {
        if g_out.nrows() != cache.rows {
            return Err(Error::ShapeMismatch("upstream rows".into()));
        }
        let go = self.spread(g_out, cache);
        let gt = g_jvp.map(|g| self.spread(g, cache));
        self.mlp.backward(&cache.mlp, &go, gt.as_ref(), grad)
    }

    pub fn named_arrays(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.mlp.named_arrays()
    }

    /// Replaces the parameters from arrays produced by [`ScoreModel::named_arrays`].
    pub fn load_arrays(&mut self, arrays: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        let current = self.named_arrays();
        if current.len() != arrays.len() {
            return Err(Error::ShapeMismatch("array count".into()));
        }
        let mut flat = Vec::with_capacity(self.num_params());
        for ((name, shape, _), (n2, s2, v2)) in current.iter().zip(arrays) {
            if name != n2 || shape != s2 || v2.len() != shape.iter().product::<usize>() {
                return Err(Error::ShapeMismatch(format!("array {n2}")));
            }
            flat.extend_from_slice(v2);
        }
        self.mlp.params_mut().copy_from_slice(&flat);
        Ok(())
    }
}

impl ScoreFunction for ScoreModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, ys: &Array2<f64>, ts: &[f64]) -> Result<Array2<f64>> {
        Ok(self.forward(ys, ts)?.0)
    }

    fn score_jvp(
        &self,
        ys: &Array2<f64>,
        ts: &[f64],
        vs: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let (o, j, _) = self.forward_jvp(ys, ts, vs)?;
        Ok((o, j))
    }
}
