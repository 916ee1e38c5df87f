//! Minimal dense layers with hand-written backward passes.
//!
//! Activations are row-major batches (`batch × features`). Parameters are
//! stored in f64 and visited in a fixed order, which is also the order used
//! by the optimizer state and by checkpoints.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    silu_grad_from(x, 1.0 / (1.0 + (-x).exp()))
}

/// SiLU derivative at `x` given its logistic gate `s = σ(x)`.
pub fn silu_grad_from(x: f64, s: f64) -> f64 {
    s * (1.0 + x * (1.0 - s))
}

/// Logistic gates `σ(z)` and activations `z·σ(z)`.
pub fn silu_with_gate(z: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let gate = z.mapv(|x| 1.0 / (1.0 + (-x).exp()));
    let out = &gate * z;
    (out, gate)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Walks every parameter tensor in a fixed order.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, d| n += d.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        self.visit("", &mut |_, _, d| out.extend_from_slice(d));
        out
    }

    /// Overwrites parameters from a flat vector in visit order.
    fn load_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        self.visit_mut(&mut |d| {
            d.copy_from_slice(&flat[at..at + d.len()]);
            at += d.len();
        });
        debug_assert_eq!(at, flat.len());
    }

    fn scale(&mut self, s: f64) {
        self.visit_mut(&mut |d| d.iter_mut().for_each(|v| *v *= s));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, d| ok &= d.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Adds `other` into `acc`, tensor by tensor. Both must share a layout.
pub fn accumulate<P: Parameters>(acc: &mut P, other: &P) {
    let flat = other.flatten();
    let mut at = 0;
    acc.visit_mut(&mut |d| {
        for v in d.iter_mut() {
            *v += flat[at];
            at += 1;
        }
    });
}

/// Fully connected layer `y = x·Wᵀ + b` with `W: out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Uniform `±1/√in` initialization for weights and biases.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            weight: Array2::from_shape_fn((output, input), |_| u.sample(rng)),
            bias: Array1::from_shape_fn(output, |_| u.sample(rng)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: &mut Linear,
    ) -> Array2<f64> {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim())
    }
}

impl Parameters for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        f(
            format!("{prefix}.weight"),
            self.weight.shape(),
            self.weight.as_slice().expect("contiguous"),
        );
        f(
            format!("{prefix}.bias"),
            self.bias.shape(),
            self.bias.as_slice().expect("contiguous"),
        );
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.weight.as_slice_mut().expect("contiguous"));
        f(self.bias.as_slice_mut().expect("contiguous"));
    }
}

/// Stack of linear layers with SiLU between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Per-layer inputs, pre-activations and gates saved by [`Mlp::forward_cached`].
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        Self {
            layers: dims
                .windows(2)
                .map(|w| Linear::init(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut gates = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(h.view());
            inputs.push(h);
            if i + 1 < self.layers.len() {
                let (a, gate) = silu_with_gate(&z);
                h = a;
                pre.push(z);
                gates.push(gate);
            } else {
                h = z;
            }
        }
        (h, MlpCache { inputs, pre, gates })
    }

    pub fn backward(&self, cache: &MlpCache, dy: ArrayView2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut d = dy.to_owned();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                ndarray::Zip::from(&mut d)
                    .and(&cache.pre[i])
                    .and(&cache.gates[i])
                    .for_each(|g, &z, &s| *g *= silu_grad_from(z, s));
            }
            d = self.layers[i].backward(cache.inputs[i].view(), d.view(), &mut grad.layers[i]);
        }
        d
    }
}

impl Parameters for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}.{i}"), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 1.0,
        }
    }
}

/// Adam optimizer state over a flattened parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, num_parameters: usize) -> Self {
        Self {
            config,
            m: vec![0.0; num_parameters],
            v: vec![0.0; num_parameters],
            step: 0,
        }
    }

    pub fn update<P: Parameters>(&mut self, params: &mut P, grads: &P) {
        self.update_scaled(params, grads, 1.0);
    }

    /// Update with the learning rate multiplied by `lr_scale`.
    pub fn update_scaled<P: Parameters>(&mut self, params: &mut P, grads: &P, lr_scale: f64) {
        let mut g = grads.flatten();
        assert_eq!(
            g.len(),
            self.m.len(),
            "optimizer state does not match parameters"
        );
        let c = self.config;
        if c.clip_norm > 0.0 {
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > c.clip_norm {
                let s = c.clip_norm / norm;
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let lr = lr_scale * c.learning_rate;
        let mut at = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        params.visit_mut(&mut |d| {
            let span = at..at + d.len();
            let state = m[span.clone()].iter_mut().zip(&mut v[span.clone()]);
            for ((p, (m, v)), g) in d.iter_mut().zip(state).zip(&g[span]) {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
            }
            at += d.len();
        });
    }
}

/// Rounds every value to the nearest f32 so that a state written to an f32
/// checkpoint and read back is bit-identical to the in-memory state.
pub fn round_to_f32(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = *v as f32 as f64);
}
