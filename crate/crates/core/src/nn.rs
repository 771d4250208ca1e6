//! Dense multilayer perceptrons with exact reverse-mode gradients and Adam.
//!
//! Every layer computes `activation(W·x + b)`. Samples are processed in
//! row-major batches (`n × dim` slices) so the encoder and the pointwise
//! decoder can evaluate many inputs without per-call allocations.
//!
//! The derivative of `relu` at exactly zero is taken to be zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VolError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative with respect to the pre-activation, given both the
    /// pre-activation and the activated value.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Identity => 1.0,
            Activation::Softplus => sigmoid(pre),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// One dense layer. `weights` is row-major `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl LayerParams {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let layer = Self {
            in_dim,
            out_dim,
            weights,
            biases,
            activation,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// Uniform Glorot initialisation in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            biases: vec![0.0; out_dim],
            activation,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(VolError::Shape("layer dimensions must be positive".into()));
        }
        if self.weights.len() != self.in_dim * self.out_dim {
            return Err(VolError::Shape(format!(
                "weight matrix has {} entries, expected {}x{}",
                self.weights.len(),
                self.out_dim,
                self.in_dim
            )));
        }
        if self.biases.len() != self.out_dim {
            return Err(VolError::Shape(format!(
                "bias vector has {} entries, expected {}",
                self.biases.len(),
                self.out_dim
            )));
        }
        if self
            .weights
            .iter()
            .chain(&self.biases)
            .any(|v| !v.is_finite())
        {
            return Err(VolError::Domain("layer parameters must be finite".into()));
        }
        Ok(())
    }

    fn forward_into(&self, inputs: &[f64], n: usize, pre: &mut Vec<f64>, post: &mut Vec<f64>) {
        pre.clear();
        post.clear();
        pre.reserve(n * self.out_dim);
        post.reserve(n * self.out_dim);
        for s in 0..n {
            let x = &inputs[s * self.in_dim..(s + 1) * self.in_dim];
            for o in 0..self.out_dim {
                let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                let z = self.biases[o] + dot(row, x);
                pre.push(z);
                post.push(self.activation.apply(z));
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// An ordered stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<LayerParams>,
}

/// Intermediate values kept from a batched forward pass for use in backward.
#[derive(Debug, Clone)]
pub struct Tape {
    n: usize,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn batch_size(&self) -> usize {
        self.n
    }
}

impl MlpParams {
    pub fn new(layers: Vec<LayerParams>) -> Result<Self> {
        let mlp = Self { layers };
        mlp.validate()?;
        Ok(mlp)
    }

    /// Glorot-initialised network with layer widths `dims` (input first).
    /// `activations` has one entry per layer, i.e. `dims.len() - 1` entries.
    pub fn glorot<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(VolError::Shape(
                "need at least two widths and one activation per layer".into(),
            ));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| LayerParams::glorot(w[0], w[1], act, rng))
            .collect();
        Self::new(layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(VolError::Shape("network needs at least one layer".into()));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(VolError::Shape(format!(
                    "layer output {} does not feed next layer input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(input, 1)
    }

    pub fn forward_batch(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        self.check_input(inputs, n)?;
        let mut current = inputs.to_vec();
        let mut pre = Vec::new();
        let mut post = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&current, n, &mut pre, &mut post);
            std::mem::swap(&mut current, &mut post);
        }
        Ok(current)
    }

    /// Forward pass keeping every intermediate value.
    pub fn forward_tape(&self, inputs: &[f64], n: usize) -> Result<Tape> {
        self.check_input(inputs, n)?;
        let mut pre_all = Vec::with_capacity(self.layers.len());
        let mut post_all: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = post_all.last().map(Vec::as_slice).unwrap_or(inputs);
            let mut pre = Vec::new();
            let mut post = Vec::new();
            layer.forward_into(x, n, &mut pre, &mut post);
            pre_all.push(pre);
            post_all.push(post);
        }
        Ok(Tape {
            n,
            input: inputs.to_vec(),
            pre: pre_all,
            post: post_all,
        })
    }

    /// Gradients of `output · cotangent` for a single input.
    pub fn backward(&self, input: &[f64], cotangent: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let tape = self.forward_tape(input, 1)?;
        let mut grads = MlpGrads::zeros_like(self);
        let dx = self.backward_tape(&tape, cotangent, &mut grads)?;
        Ok((grads, dx))
    }

    /// Reverse pass over a recorded batch. Parameter gradients are summed
    /// over the batch and *added* into `grads`; the returned vector holds the
    /// per-sample input gradients (`n × in_dim`).
    pub fn backward_tape(
        &self,
        tape: &Tape,
        cotangent: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        let n = tape.n;
        if cotangent.len() != n * self.out_dim() {
            return Err(VolError::Shape(format!(
                "cotangent has {} entries, expected {}",
                cotangent.len(),
                n * self.out_dim()
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(VolError::Shape(
                "gradient buffer does not match network".into(),
            ));
        }
        let mut upstream = cotangent.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let pre = &tape.pre[idx];
            let post = &tape.post[idx];
            let x = if idx == 0 {
                tape.input.as_slice()
            } else {
                tape.post[idx - 1].as_slice()
            };
            let (ind, outd) = (layer.in_dim, layer.out_dim);
            for (k, u) in upstream.iter_mut().enumerate() {
                *u *= layer.activation.derivative(pre[k], post[k]);
            }
            let g = &mut grads.layers[idx];
            let mut down = vec![0.0; n * ind];
            for s in 0..n {
                let xs = &x[s * ind..(s + 1) * ind];
                let ds = &mut down[s * ind..(s + 1) * ind];
                for o in 0..outd {
                    let delta = upstream[s * outd + o];
                    if delta == 0.0 {
                        continue;
                    }
                    g.biases[o] += delta;
                    let gw = &mut g.weights[o * ind..(o + 1) * ind];
                    let w = &layer.weights[o * ind..(o + 1) * ind];
                    for i in 0..ind {
                        gw[i] += delta * xs[i];
                        ds[i] += delta * w[i];
                    }
                }
            }
            upstream = down;
        }
        Ok(upstream)
    }

    fn check_input(&self, inputs: &[f64], n: usize) -> Result<()> {
        if inputs.len() != n * self.in_dim() {
            return Err(VolError::Shape(format!(
                "input has {} entries, expected {} x {}",
                inputs.len(),
                n,
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// All parameters, layer by layer (weights then biases).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(VolError::Shape(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Gradient (or any per-parameter buffer) shaped like an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn fill_zero(&mut self) {
        self.values_mut().for_each(|v| *v = 0.0);
    }

    fn matches(&self, params: &MlpParams) -> bool {
        self.layers.len() == params.layers.len()
            && self.layers.iter().zip(&params.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len()
            })
    }
}

/// Adam optimiser state for one network.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: MlpGrads,
    pub second_moment: MlpGrads,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        Self {
            first_moment: MlpGrads::zeros_like(params),
            second_moment: MlpGrads::zeros_like(params),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
        if !grads.matches(params) || !self.first_moment.matches(params) {
            return Err(VolError::Shape(
                "gradient shape does not mirror parameters".into(),
            ));
        }
        if !grads.is_finite() {
            return Err(VolError::Divergence(format!(
                "non-finite gradient at Adam step {}",
                self.step_count + 1
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (layer_idx, layer) in params.layers.iter_mut().enumerate() {
            let g = &grads.layers[layer_idx];
            let m = &mut self.first_moment.layers[layer_idx];
            let v = &mut self.second_moment.layers[layer_idx];
            let pairs = [
                (
                    &mut layer.weights,
                    &g.weights,
                    &mut m.weights,
                    &mut v.weights,
                ),
                (&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases),
            ];
            for (p, g, m, v) in pairs {
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
