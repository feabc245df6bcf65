use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::gemm::{matmul, matmul_add};
use crate::numcore::rng::RngStream;

/// Fully connected ReLU network with a linear head.
///
/// Parameters are stored flat; each layer contributes its `out×in` weight
/// (row-major) followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer; `acts[0]` is the network input.
    acts: Vec<Array2<f64>>,
    /// Tangents of `acts` when a forward-mode direction was supplied.
    tangents: Option<Vec<Array2<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Kaiming-uniform hidden layers and a zero output layer.
    ZeroHead,
    /// Kaiming-uniform everywhere, small random biases.
    Random,
}

impl Mlp {
    pub fn new(widths: &[usize], init: Init, rng: &mut RngStream) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|w| *w == 0) {
            return Err(Error::InvalidParameter(format!("layer widths {widths:?}")));
        }
        let mut params = Vec::with_capacity(Self::count(widths));
        let layers = widths.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let last = l + 1 == layers;
            for _ in 0..fan_in * fan_out {
                let w = if last && init == Init::ZeroHead {
                    0.0
                } else {
                    rng.uniform_in(-bound, bound)
                };
                params.push(w);
            }
            for _ in 0..fan_out {
                let b = match init {
                    Init::ZeroHead => 0.0,
                    Init::Random => rng.uniform_in(-0.1, 0.1),
                };
                params.push(b);
            }
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    pub fn from_params(widths: &[usize], params: Vec<f64>) -> Result<Self> {
        if widths.len() < 2 || params.len() != Self::count(widths) {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for widths {widths:?}",
                params.len()
            )));
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    fn count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.widths.len());
        let mut o = 0;
        offs.push(0);
        for w in self.widths.windows(2) {
            o += w[0] * w[1] + w[1];
            offs.push(o);
        }
        offs
    }

    fn layer(&self, l: usize, off: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (fi, fo) = (self.widths[l], self.widths[l + 1]);
        let w = ArrayView2::from_shape((fo, fi), &self.params[off..off + fi * fo]).unwrap();
        let b = ArrayView1::from(&self.params[off + fi * fo..off + fi * fo + fo]);
        (w, b)
    }

    /// Per-layer `(weight, bias)` views in order.
    pub fn layers(&self) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        let offs = self.layer_offsets();
        (0..self.widths.len() - 1).map(|l| self.layer(l, offs[l])).collect()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.run(x, None)
    }

    /// Forward pass that also pushes the input direction `dx` through the
    /// network, returning `J·dx` alongside the output.
    pub fn forward_tangent(
        &self,
        x: &Array2<f64>,
        dx: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, MlpCache)> {
        if dx.dim() != x.dim() {
            return Err(Error::ShapeMismatch("tangent shape".into()));
        }
        let (out, mut cache) = self.run(x, Some(dx))?;
        let tan = cache.tangents.as_mut().unwrap().pop().unwrap();
        Ok((out, tan, cache))
    }

    fn run(&self, x: &Array2<f64>, dx: Option<&Array2<f64>>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, expected {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let layers = self.layers();
        let n = layers.len();
        let mut acts = Vec::with_capacity(n);
        let mut tangents = dx.map(|d| {
            let mut v = Vec::with_capacity(n + 1);
            v.push(d.clone());
            v
        });
        let mut h = x.clone();
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = matmul(h.view(), w.t());
            z += b;
            let last = l + 1 == n;
            if !last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            if let Some(tans) = tangents.as_mut() {
                let mut dz = matmul(tans.last().unwrap().view(), w.t());
                if !last {
                    Zip::from(&mut dz).and(&z).for_each(|d, a| {
                        if *a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                }
                tans.push(dz);
            }
            acts.push(h);
            h = z;
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        Ok((h, MlpCache { acts, tangents }))
    }

    /// Accumulates into `grad` the parameter gradient of
    /// `⟨out, g_out⟩ + ⟨J·dx, g_tan⟩` for the pass recorded in `cache`.
    pub fn backward(
        &self,
        cache: &MlpCache,
        g_out: &Array2<f64>,
        g_tan: Option<&Array2<f64>>,
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch("gradient buffer".into()));
        }
        if g_tan.is_some() && cache.tangents.is_none() {
            return Err(Error::ShapeMismatch("tangent upstream without tangent pass".into()));
        }
        let offs = self.layer_offsets();
        let layers = self.layers();
        let mut g = g_out.clone();
        let mut gt = g_tan.cloned();
        for l in (0..layers.len()).rev() {
            let (w, _) = layers[l];
            let (fi, fo) = (self.widths[l], self.widths[l + 1]);
            let a = &cache.acts[l];
            let mut dw = matmul(g.t(), a.view());
            if let (Some(gt), Some(tans)) = (gt.as_ref(), cache.tangents.as_ref()) {
                matmul_add(&mut dw, gt.t(), tans[l].view());
            }
            let db: Array1<f64> = g.sum_axis(Axis(0));
            let off = offs[l];
            for (dst, src) in grad[off..off + fi * fo].iter_mut().zip(dw.iter()) {
                *dst += src;
            }
            for (dst, src) in grad[off + fi * fo..off + fi * fo + fo].iter_mut().zip(db.iter()) {
                *dst += src;
            }
            if l == 0 {
                break;
            }
            let mut gp = matmul(g.view(), w);
            Zip::from(&mut gp).and(a).for_each(|d, v| {
                if *v <= 0.0 {
                    *d = 0.0;
                }
            });
            g = gp;
            if let Some(t) = gt.take() {
                let mut tp = matmul(t.view(), w);
                Zip::from(&mut tp).and(a).for_each(|d, v| {
                    if *v <= 0.0 {
                        *d = 0.0;
                    }
                });
                gt = Some(tp);
            }
        }
        Ok(())
    }

    /// Per-layer `(name, shape, values)` for serialization.
    pub fn named_arrays(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let offs = self.layer_offsets();
        let mut out = Vec::new();
        for l in 0..self.widths.len() - 1 {
            let (fi, fo) = (self.widths[l], self.widths[l + 1]);
            let o = offs[l];
            out.push((
                format!("layer{l}.weight"),
                vec![fo, fi],
                self.params[o..o + fi * fo].to_vec(),
            ));
            out.push((
                format!("layer{l}.bias"),
                vec![fo],
                self.params[o + fi * fo..o + fi * fo + fo].to_vec(),
            ));
        }
        out
    }
}

/// Stacks `[y | t-features]` rows as network input.
pub fn time_input(ys: &Array2<f64>, ts: &[f64], time_features: usize) -> Array2<f64> {
    let (n, d) = ys.dim();
    let mut x = Array2::zeros((n, d + 1 + 2 * time_features));
    x.slice_mut(s![.., ..d]).assign(ys);
    for (i, &t) in ts.iter().enumerate() {
        x[(i, d)] = t;
        for k in 0..time_features {
            let w = (1u64 << k) as f64 * t;
            x[(i, d + 1 + 2 * k)] = w.sin();
            x[(i, d + 2 + 2 * k)] = w.cos();
        }
    }
    x
}
