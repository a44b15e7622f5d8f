//! Feed-forward network with sinusoidal time embedding and manual backprop.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal, Rng};

/// Time inputs are scaled to this range before the sinusoidal embedding.
const TIME_SCALE: f64 = 1000.0;
const MAX_PERIOD: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let sig = 1.0 / (1.0 + (-z).exp());
                sig * (1.0 + z * (1.0 - sig))
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

/// MLP mapping `[x, embed(time)]` to `dim_g` outputs. Weights are stored
/// `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNetwork {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
    pub time_dim: usize,
    pub dim_x: usize,
}

/// Parameter gradients, laid out like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

/// Sinusoidal embedding of times in `[0, 1]`, one row per time.
pub fn time_embedding(times: &[f64], dim: usize) -> Array2<f64> {
    let half = dim / 2;
    let mut out = Array2::zeros((times.len(), dim));
    for (r, &t) in times.iter().enumerate() {
        for k in 0..half {
            let freq = (-(MAX_PERIOD.ln()) * k as f64 / half as f64).exp();
            let arg = TIME_SCALE * t * freq;
            out[[r, k]] = arg.sin();
            out[[r, half + k]] = arg.cos();
        }
    }
    out
}

impl ScoreNetwork {
    /// Random hidden layers (variance `1/fan_in`) and a zero output layer.
    pub fn new(dim_x: usize, dim_out: usize, hidden: &[usize], time_dim: usize, activation: Activation, rng: &mut Rng) -> Result<Self> {
        if dim_x == 0 || dim_out == 0 || time_dim % 2 != 0 {
            return Err(Error::InvalidParams("network needs dim_x, dim_out >= 1 and an even time embedding".into()));
        }
        let mut layer_sizes = vec![dim_x + time_dim];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(dim_out);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_sizes.len() - 1 {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let last = l + 2 == layer_sizes.len();
            let scale = (1.0 / fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| if last { 0.0 } else { scale * normal(rng) }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(ScoreNetwork { layer_sizes, weights, biases, activation, time_dim, dim_x })
    }

    pub fn dim_out(&self) -> usize {
        *self.layer_sizes.last().expect("at least one layer")
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn input(&self, x: ArrayView2<f64>, times: &[f64]) -> Array2<f64> {
        concatenate![Axis(1), x, time_embedding(times, self.time_dim)]
    }

    /// Batched forward pass; `times` are in `[0, 1]`, one per row.
    pub fn forward(&self, x: ArrayView2<f64>, times: &[f64]) -> Array2<f64> {
        self.forward_cached(x, times).0
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>, times: &[f64]) -> (Array2<f64>, ForwardCache) {
        let mut h = self.input(x, times);
        let n_layers = self.weights.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let z = h.dot(&self.weights[l].t()) + &self.biases[l];
            inputs.push(h);
            if l + 1 == n_layers {
                h = z;
            } else {
                let act = self.activation;
                h = z.mapv(|v| act.apply(v));
                pre.push(z);
            }
        }
        (h, ForwardCache { inputs, pre })
    }

    /// Parameter gradients of a loss whose gradient with respect to the
    /// outputs is `d_out`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Gradients {
        let n_layers = self.weights.len();
        let mut gw = vec![Array2::zeros((0, 0)); n_layers];
        let mut gb = vec![Array1::zeros(0); n_layers];
        let mut delta = d_out.clone();
        for l in (0..n_layers).rev() {
            gw[l] = delta.t().dot(&cache.inputs[l]);
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l]);
                let act = self.activation;
                back.zip_mut_with(&cache.pre[l - 1], |d, &z| *d *= act.derivative(z));
                delta = back;
            }
        }
        Gradients { weights: gw, biases: gb }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::SizeMismatch(format!("{} parameters given, network has {}", p.len(), self.n_params())));
        }
        let mut i = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = p[i];
                i += 1;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite())) && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64, betas: (f64, f64), eps: f64) -> Self {
        Adam { lr, beta1: betas.0, beta2: betas.1, eps, step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn update(&mut self, net: &mut ScoreNetwork, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut i = 0;
        let pairs = net.weights.iter_mut().zip(&grads.weights).flat_map(|(w, g)| w.iter_mut().zip(g.iter()));
        let bias_pairs = net.biases.iter_mut().zip(&grads.biases).flat_map(|(b, g)| b.iter_mut().zip(g.iter()));
        for (p, &g) in pairs.chain(bias_pairs) {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            i += 1;
        }
    }
}

/// Mean squared loss `mean_rows ‖out − target‖²` and its output gradient.
pub fn mse(out: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let diff = out - target;
    let n = out.nrows().max(1) as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}

/// First `n` rows of a matrix.
pub fn head_rows(m: &Array2<f64>, n: usize) -> Array2<f64> {
    m.slice(s![..n, ..]).to_owned()
}
