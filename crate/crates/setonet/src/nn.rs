//! Feedforward building blocks with explicit reverse-mode gradients.
//!
//! Everything here is plain ndarray math: a `Linear` layer stores its weight
//! as `in_dim x out_dim` so a batch `x` of shape `N x in_dim` maps to
//! `x.dot(w) + b`. Backward passes accumulate into gradient buffers owned by
//! the layer; the optimizer walks them through the [`Params`] visitor.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SetONetError};

/// Pointwise nonlinearity for feedforward maps and score mixing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Softplus,
    Gelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
            Activation::Gelu => gelu(x),
        }
    }

    /// Derivative at pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Softplus => sigmoid(x),
            Activation::Gelu => gelu_derivative(x),
        }
    }

    pub fn apply_inplace(self, a: &mut Array2<f64>) {
        a.mapv_inplace(|v| self.apply(v));
    }
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// tanh form of GELU; exact erf is not worth a special-function dependency here
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Mutable view of one parameter tensor and its gradient, both flattened.
pub struct ParamRef<'a> {
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
}

/// Visitor over every trainable tensor of a model, in a stable order.
pub trait Params {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>));

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.grad.fill(0.0));
    }

    /// Global l2 norm of all gradients.
    fn grad_norm(&mut self) -> f64 {
        let mut s = 0.0;
        self.visit_params(&mut |p| {
            for g in p.grad.iter() {
                s += g * g;
            }
        });
        s.sqrt()
    }

    /// Scale gradients so their global norm is at most `max_norm`.
    fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm {
            let scale = max_norm / norm;
            self.visit_params(&mut |p| {
                for g in p.grad.iter_mut() {
                    *g *= scale;
                }
            });
        }
    }
}

/// Fully connected layer, weight `in_dim x out_dim`, optional bias.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Option<Array1<f64>>,
    pub dw: Array2<f64>,
    pub db: Option<Array1<f64>>,
}

impl Linear {
    /// Fan-in uniform init on U(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
    pub fn new(in_dim: usize, out_dim: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = Array2::from_shape_fn((in_dim, out_dim), |_| rng.random_range(-bound..bound));
        let b = bias.then(|| Array1::from_shape_fn(out_dim, |_| rng.random_range(-bound..bound)));
        let db = bias.then(|| Array1::zeros(out_dim));
        Linear {
            w,
            b,
            dw: Array2::zeros((in_dim, out_dim)),
            db,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w);
        if let Some(b) = &self.b {
            y += b;
        }
        y
    }

    /// Accumulates dw/db and returns dx. `x` must be the forward input.
    pub fn backward(&mut self, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>) -> Array2<f64> {
        self.dw += &x.t().dot(&dy);
        if let Some(db) = &mut self.db {
            *db += &dy.sum_axis(Axis(0));
        }
        dy.dot(&self.w.t())
    }

    fn visit(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        f(ParamRef {
            value: self.w.as_slice_mut().expect("contiguous"),
            grad: self.dw.as_slice_mut().expect("contiguous"),
        });
        if let (Some(b), Some(db)) = (&mut self.b, &mut self.db) {
            f(ParamRef {
                value: b.as_slice_mut().expect("contiguous"),
                grad: db.as_slice_mut().expect("contiguous"),
            });
        }
    }
}

impl Params for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        self.visit(f);
    }
}

/// Multi-layer perceptron; activation between layers, linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

/// Forward tape for [`Mlp::forward_cached`]: layer inputs plus pre-activations.
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    preacts: Vec<Array2<f64>>,
}

impl Mlp {
    /// Builds from a full width list `[in, hidden.., out]`.
    pub fn new(widths: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(SetONetError::validation(
                "feedforward map needs at least input and output widths",
            ));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(SetONetError::validation("feedforward widths must be positive"));
        }
        let layers = widths
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], true, rng))
            .collect();
        Ok(Mlp { layers, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(h.view());
            if i < last {
                self.activation.apply_inplace(&mut h);
            }
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            preacts: Vec::with_capacity(self.layers.len().saturating_sub(1)),
        };
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            cache.inputs.push(h.clone());
            h = layer.forward(h.view());
            if i < last {
                cache.preacts.push(h.clone());
                self.activation.apply_inplace(&mut h);
            }
        }
        (h, cache)
    }

    /// Accumulates layer gradients and returns d(input).
    pub fn backward(&mut self, cache: &MlpCache, dy: ArrayView2<'_, f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut grad = dy.to_owned();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                let pre = &cache.preacts[i];
                grad.zip_mut_with(pre, |g, &z| *g *= self.activation.derivative(z));
            }
            grad = self.layers[i].backward(cache.inputs[i].view(), grad.view());
        }
        grad
    }
}

impl Params for Mlp {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        for layer in &mut self.layers {
            layer.visit(f);
        }
    }
}

/// Bare learnable vector (e.g. an output bias) with its gradient.
#[derive(Debug, Clone)]
pub struct Tensor1 {
    pub v: Array1<f64>,
    pub g: Array1<f64>,
}

impl Tensor1 {
    pub fn zeros(n: usize) -> Self {
        Tensor1 { v: Array1::zeros(n), g: Array1::zeros(n) }
    }
}

impl Params for Tensor1 {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        f(ParamRef {
            value: self.v.as_slice_mut().expect("contiguous"),
            grad: self.g.as_slice_mut().expect("contiguous"),
        });
    }
}

/// Bare learnable matrix (e.g. query tokens) with its gradient.
#[derive(Debug, Clone)]
pub struct Tensor2 {
    pub v: Array2<f64>,
    pub g: Array2<f64>,
}

impl Tensor2 {
    /// Zero-mean Gaussian init, the convention for learnable tokens.
    pub fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Self {
        let dist = rand_distr::Normal::new(0.0, std).expect("valid std");
        let v = Array2::from_shape_fn((rows, cols), |_| rng.sample(dist));
        Tensor2 { v, g: Array2::zeros((rows, cols)) }
    }
}

impl Params for Tensor2 {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        f(ParamRef {
            value: self.v.as_slice_mut().expect("contiguous"),
            grad: self.g.as_slice_mut().expect("contiguous"),
        });
    }
}

/// Adam with torch-default moments (0.9, 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update from the gradients currently stored in the model.
    pub fn step(&mut self, model: &mut dyn Params) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);

        let mut idx = 0;
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        model.visit_params(&mut |p| {
            if idx == m_all.len() {
                m_all.push(vec![0.0; p.value.len()]);
                v_all.push(vec![0.0; p.value.len()]);
            }
            let m = &mut m_all[idx];
            let v = &mut v_all[idx];
            assert_eq!(m.len(), p.value.len(), "parameter layout changed under optimizer");
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            idx += 1;
        });
    }
}
