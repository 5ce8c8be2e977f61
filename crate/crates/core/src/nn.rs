//! Minimal feed-forward network used as the Q-function approximator.
//!
//! Hidden layers apply the configured activation followed by inverted
//! dropout (train mode only); the output layer is linear. Gradients come
//! from hand-written backpropagation and are applied with a bias-corrected
//! Adam update. Everything is 64-bit.

#![allow(clippy::needless_range_loop)]

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    LeakyRelu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    0.01 * z
                }
            }
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.01
                }
            }
        }
    }
}

/// Network architecture plus regularization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub dropout_rate: f64,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        MlpConfig {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Relu,
            dropout_rate: 0.0,
        }
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(NnError::InvalidConfig("dims must be >= 1".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(NnError::InvalidConfig("hidden dims must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NnError::InvalidConfig(format!(
                "dropout_rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// `(in_dim, out_dim)` of every layer, input to output.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }
}

/// One dense layer. `weights` is row-major: `weights[o * in_dim + i]`
/// connects input `i` to output `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Layer {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }
}

/// Network parameters together with the architecture they realize.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub config: MlpConfig,
    pub layers: Vec<Layer>,
}

/// Activations captured by a training-mode forward pass, consumed by
/// [`MlpParams::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input seen by each layer (post-activation, post-dropout of the
    /// previous layer). `layer_inputs[0]` is the network input.
    layer_inputs: Vec<Vec<f64>>,
    /// Pre-activation values of each layer.
    pre_activations: Vec<Vec<f64>>,
    /// Per-unit dropout multiplier (0 or 1/(1-p)) for each hidden layer;
    /// `None` when dropout was inactive.
    dropout_scale: Vec<Option<Vec<f64>>>,
}

/// Parameter gradients, shaped exactly like the parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Gradients {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }
}

#[derive(Debug)]
pub enum NnError {
    InvalidConfig(String),
    /// Input length does not match the declared input dimension.
    ShapeMismatch {
        expected: usize,
        got: usize,
    },
    /// Cache does not belong to this parameter set.
    CacheMismatch,
    /// A gradient or parameter stopped being finite.
    NonFinite {
        location: String,
    },
    Io(std::io::Error),
    /// Model file failed to parse or validate.
    Format(String),
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::InvalidConfig(msg) => write!(f, "invalid network config: {msg}"),
            NnError::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected}, got {got}")
            }
            NnError::CacheMismatch => write!(f, "forward cache does not match these parameters"),
            NnError::NonFinite { location } => write!(f, "non-finite value at {location}"),
            NnError::Io(e) => write!(f, "model io error: {e}"),
            NnError::Format(msg) => write!(f, "model format error: {msg}"),
        }
    }
}

impl std::error::Error for NnError {}

impl From<std::io::Error> for NnError {
    fn from(e: std::io::Error) -> Self {
        NnError::Io(e)
    }
}

impl MlpParams {
    /// Initialize weights from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` with
    /// zero biases. Deterministic for a given RNG state.
    pub fn init(config: MlpConfig, rng: &mut impl Rng) -> Result<MlpParams, NnError> {
        config.validate()?;
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(in_dim, out_dim)| {
                let bound = 1.0 / (in_dim as f64).sqrt();
                let weights = (0..in_dim * out_dim)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer {
                    in_dim,
                    out_dim,
                    weights,
                    bias: vec![0.0; out_dim],
                }
            })
            .collect();
        Ok(MlpParams { config, layers })
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.config.input_dim {
            return Err(NnError::ShapeMismatch {
                expected: self.config.input_dim,
                got: input.len(),
            });
        }
        Ok(())
    }

    fn affine(layer: &Layer, input: &[f64]) -> Vec<f64> {
        let mut out = layer.bias.clone();
        for o in 0..layer.out_dim {
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out[o] += acc;
        }
        out
    }

    /// Deterministic inference pass: no dropout, no cache.
    pub fn forward_eval(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut current = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, &current);
            if l < last {
                for v in &mut z {
                    *v = self.config.activation.apply(*v);
                }
            }
            current = z;
        }
        Ok(current)
    }

    /// Training pass: applies inverted dropout to hidden activations and
    /// returns the cache needed by [`MlpParams::backward`]. With
    /// `dropout_rate == 0` the output equals [`MlpParams::forward_eval`].
    pub fn forward_train(
        &self,
        input: &[f64],
        rng: &mut impl Rng,
    ) -> Result<(Vec<f64>, ForwardCache), NnError> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let p = self.config.dropout_rate;
        let mut cache = ForwardCache {
            layer_inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(self.layers.len()),
            dropout_scale: Vec::with_capacity(last),
        };
        let mut current = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            cache.layer_inputs.push(current.clone());
            let z = Self::affine(layer, &current);
            cache.pre_activations.push(z.clone());
            if l < last {
                let mut a: Vec<f64> = z.iter().map(|&v| self.config.activation.apply(v)).collect();
                if p > 0.0 {
                    let keep = 1.0 - p;
                    let scale: Vec<f64> = (0..a.len())
                        .map(|_| {
                            if rng.random::<f64>() < p {
                                0.0
                            } else {
                                1.0 / keep
                            }
                        })
                        .collect();
                    for (v, s) in a.iter_mut().zip(&scale) {
                        *v *= s;
                    }
                    cache.dropout_scale.push(Some(scale));
                } else {
                    cache.dropout_scale.push(None);
                }
                current = a;
            } else {
                current = z;
            }
        }
        Ok((current, cache))
    }

    /// Backpropagate `output_grad` (dLoss/dOutput) through the cached
    /// forward pass. Dropped-out units contribute zero gradient.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
    ) -> Result<Gradients, NnError> {
        let n_layers = self.layers.len();
        if cache.layer_inputs.len() != n_layers
            || cache.pre_activations.len() != n_layers
            || cache.dropout_scale.len() != n_layers - 1
        {
            return Err(NnError::CacheMismatch);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if cache.layer_inputs[l].len() != layer.in_dim
                || cache.pre_activations[l].len() != layer.out_dim
            {
                return Err(NnError::CacheMismatch);
            }
        }
        if output_grad.len() != self.config.output_dim {
            return Err(NnError::ShapeMismatch {
                expected: self.config.output_dim,
                got: output_grad.len(),
            });
        }

        let mut grads = Gradients::zeros_like(self);
        let mut delta = output_grad.to_vec();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let inputs = &cache.layer_inputs[l];
            let g = &mut grads.layers[l];
            for o in 0..layer.out_dim {
                let d = delta[o];
                g.bias[o] = d;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, x) in row.iter_mut().zip(inputs) {
                    *gw = d * x;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; layer.in_dim];
                for o in 0..layer.out_dim {
                    let d = delta[o];
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                if let Some(scale) = &cache.dropout_scale[l - 1] {
                    for (p, s) in prev.iter_mut().zip(scale) {
                        *p *= s;
                    }
                }
                let z_prev = &cache.pre_activations[l - 1];
                for (p, z) in prev.iter_mut().zip(z_prev) {
                    *p *= self.config.activation.derivative(*z);
                }
                delta = prev;
            }
        }
        Ok(grads)
    }
}

/// Adam optimizer state: first/second-moment accumulators shaped like the
/// parameters, plus the step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Layer>,
    v: Vec<Layer>,
}

impl AdamState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> AdamState {
        let zeros = || {
            params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect::<Vec<_>>()
        };
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update, applied in place.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<(), NnError> {
    for (l, (layer, glayer)) in params.layers.iter().zip(&grads.layers).enumerate() {
        if layer.weights.len() != glayer.weights.len() || layer.bias.len() != glayer.bias.len() {
            return Err(NnError::ShapeMismatch {
                expected: layer.weights.len(),
                got: glayer.weights.len(),
            });
        }
        for (i, g) in glayer.weights.iter().enumerate() {
            if !g.is_finite() {
                return Err(NnError::NonFinite {
                    location: format!("layer {l} weights[{i}]"),
                });
            }
        }
        for (i, g) in glayer.bias.iter().enumerate() {
            if !g.is_finite() {
                return Err(NnError::NonFinite {
                    location: format!("layer {l} bias[{i}]"),
                });
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((layer, glayer), (mlayer, vlayer)) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let update = |theta: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        };
        for ((theta, &g), (m, v)) in layer
            .weights
            .iter_mut()
            .zip(&glayer.weights)
            .zip(mlayer.weights.iter_mut().zip(vlayer.weights.iter_mut()))
        {
            update(theta, g, m, v);
        }
        for ((theta, &g), (m, v)) in layer
            .bias
            .iter_mut()
            .zip(&glayer.bias)
            .zip(mlayer.bias.iter_mut().zip(vlayer.bias.iter_mut()))
        {
            update(theta, g, m, v);
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelLayerFile {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    config: MlpConfig,
    layers: Vec<ModelLayerFile>,
}

/// Serialize parameters to the JSON model format. Finite doubles survive a
/// save/load round trip value-exactly.
pub fn model_to_json(params: &MlpParams) -> String {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        config: params.config.clone(),
        layers: params
            .layers
            .iter()
            .map(|l| ModelLayerFile {
                weights: l.weights.clone(),
                bias: l.bias.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("model serialization cannot fail")
}

pub fn model_from_json(text: &str) -> Result<MlpParams, NnError> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| NnError::Format(e.to_string()))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(NnError::Format(format!(
            "unsupported model format version {}, expected {MODEL_FORMAT_VERSION}",
            file.format_version
        )));
    }
    file.config.validate()?;
    let dims = file.config.layer_dims();
    if file.layers.len() != dims.len() {
        return Err(NnError::Format(format!(
            "expected {} layers, got {}",
            dims.len(),
            file.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(dims.len());
    for (idx, (layer, (in_dim, out_dim))) in file.layers.into_iter().zip(dims).enumerate() {
        if layer.weights.len() != in_dim * out_dim || layer.bias.len() != out_dim {
            return Err(NnError::Format(format!(
                "layer {idx} shape does not match config"
            )));
        }
        if layer
            .weights
            .iter()
            .chain(&layer.bias)
            .any(|v| !v.is_finite())
        {
            return Err(NnError::Format(format!(
                "layer {idx} has non-finite entries"
            )));
        }
        layers.push(Layer {
            in_dim,
            out_dim,
            weights: layer.weights,
            bias: layer.bias,
        });
    }
    Ok(MlpParams {
        config: file.config,
        layers,
    })
}

pub fn save_model(params: &MlpParams, path: &Path) -> Result<(), NnError> {
    fs::write(path, model_to_json(params))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpParams, NnError> {
    let text = fs::read_to_string(path)?;
    model_from_json(&text)
}
