//! A small feed-forward softmax classifier with hand-written backprop,
//! SGD with Nesterov momentum, a cosine schedule and an EMA shadow.
//!
//! Parameters live in one flat vector. Layer `l` occupies a weight block
//! of `out * in` entries (row-major, one row per output unit) followed by
//! `out` biases. Gradients, velocities and EMA shadows share that layout.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::credal::{ProbDist, EPS};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `h`.
    fn derivative(self, h: f64) -> f64 {
        match self {
            Activation::Sigmoid => h * (1.0 - h),
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    dropout_rate: f64,
    params: Vec<f64>,
}

/// Everything backprop needs from a forward pass, including the dropout
/// masks that were sampled.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Input of each layer (post-dropout for hidden layers).
    inputs: Vec<Vec<f64>>,
    /// Activation outputs of hidden layers before dropout.
    hidden: Vec<Vec<f64>>,
    /// Inverted-dropout scale per hidden unit, when dropout was sampled.
    masks: Vec<Option<Vec<f64>>>,
    pub logits: Vec<f64>,
    pub probs: ProbDist,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

impl Mlp {
    fn check_shape(sizes: &[usize], dropout_rate: f64) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        if *sizes.last().unwrap() < 2 {
            return Err(Error::Config("softmax head needs at least 2 outputs".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        Ok(())
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], activation: Activation, dropout_rate: f64, rng: &mut Rng) -> Result<Self> {
        let mut model = Self::zeros(sizes, activation, dropout_rate)?;
        for l in 0..model.num_layers() {
            let (w, _, fan_in, fan_out) = model.layer_span(l);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut model.params[w..w + fan_in * fan_out] {
                *p = rng.random_range(-limit..=limit);
            }
        }
        Ok(model)
    }

    pub fn zeros(sizes: &[usize], activation: Activation, dropout_rate: f64) -> Result<Self> {
        Self::check_shape(sizes, dropout_rate)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            dropout_rate,
            params: vec![0.0; param_count(sizes)],
        })
    }

    pub fn from_params(sizes: &[usize], activation: Activation, dropout_rate: f64, params: Vec<f64>) -> Result<Self> {
        Self::check_shape(sizes, dropout_rate)?;
        let expected = param_count(sizes);
        if params.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: params.len() });
        }
        Ok(Self { sizes: sizes.to_vec(), activation, dropout_rate, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
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

    /// Same architecture with different parameter values.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        Self::from_params(&self.sizes, self.activation, self.dropout_rate, params)
    }

    /// `(weight offset, bias offset, fan_in, fan_out)` of layer `l`.
    fn layer_span(&self, l: usize) -> (usize, usize, usize, usize) {
        let offset: usize = self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        (offset, offset + fan_in * fan_out, fan_in, fan_out)
    }

    /// Softmax prediction. Dropout masks are drawn from `rng` with the
    /// model's own rate when it is given; `None` is the deterministic pass.
    pub fn forward(&self, x: &[f64], rng: Option<&mut Rng>) -> Result<Forward> {
        self.forward_with_rate(x, self.dropout_rate, rng)
    }

    /// Like [`Mlp::forward`] but with an explicit dropout rate, used for
    /// Monte-Carlo sampling independently of the training rate.
    pub fn forward_with_rate(&self, x: &[f64], rate: f64, mut rng: Option<&mut Rng>) -> Result<Forward> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: x.len() });
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let layers = self.num_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut hidden = Vec::with_capacity(layers - 1);
        let mut masks = Vec::with_capacity(layers - 1);
        let mut a = x.to_vec();
        for l in 0..layers {
            let (w, b, fan_in, fan_out) = self.layer_span(l);
            let weights = &self.params[w..b];
            let biases = &self.params[b..b + fan_out];
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    biases[o] + row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            inputs.push(std::mem::take(&mut a));
            if l + 1 == layers {
                let probs = ProbDist::new(softmax(&z))?;
                return Ok(Forward { inputs, hidden, masks, logits: z, probs });
            }
            let h: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
            let mask = match rng.as_deref_mut() {
                Some(r) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    Some((0..fan_out).map(|_| if r.random::<f64>() < rate { 0.0 } else { keep }).collect::<Vec<_>>())
                }
                _ => None,
            };
            a = match &mask {
                Some(m) => h.iter().zip(m).map(|(hi, mi)| hi * mi).collect(),
                None => h.clone(),
            };
            hidden.push(h);
            masks.push(mask);
        }
        unreachable!("network has at least one layer")
    }

    /// Deterministic prediction.
    pub fn predict(&self, x: &[f64]) -> Result<ProbDist> {
        Ok(self.forward(x, None)?.probs)
    }

    /// Adds the parameter gradient of a loss to `grads`, given the loss
    /// gradient with respect to the predicted probabilities of `trace`.
    /// The dropout masks of the forward pass are reused.
    pub fn backward(&self, trace: &Forward, grad_probs: &[f64], grads: &mut [f64]) -> Result<()> {
        let k = self.num_classes();
        if grad_probs.len() != k {
            return Err(Error::DimensionMismatch { expected: k, found: grad_probs.len() });
        }
        if grads.len() != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), found: grads.len() });
        }
        if trace.inputs.len() != self.num_layers() || trace.inputs[0].len() != self.input_dim() {
            return Err(Error::Config("forward trace does not belong to this architecture".into()));
        }
        let p = trace.probs.probs();
        let inner: f64 = grad_probs.iter().zip(p).map(|(g, pi)| g * pi).sum();
        let mut delta: Vec<f64> = grad_probs.iter().zip(p).map(|(g, pi)| pi * (g - inner)).collect();

        for l in (0..self.num_layers()).rev() {
            let (w, b, fan_in, fan_out) = self.layer_span(l);
            let input = &trace.inputs[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grads[w + o * fan_in..w + (o + 1) * fan_in];
                for (g, ai) in row.iter_mut().zip(input) {
                    *g += d * ai;
                }
                grads[b + o] += d;
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[w..b];
            let mut upstream = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (u, wi) in upstream.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                    *u += d * wi;
                }
            }
            let h = &trace.hidden[l - 1];
            if let Some(mask) = &trace.masks[l - 1] {
                for (u, m) in upstream.iter_mut().zip(mask) {
                    *u *= m;
                }
            }
            for (u, &hi) in upstream.iter_mut().zip(h) {
                *u *= self.activation.derivative(hi);
            }
            delta = upstream;
        }
        Ok(())
    }
}

/// SGD state. The update with `d = g + wd * theta` is
///
/// ```text
/// v     <- momentum * v - lr * d
/// theta <- theta + momentum * v - lr * d    (nesterov)
/// theta <- theta + v                        (classical momentum)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<f64>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(num_params: usize, learning_rate: f64, momentum: f64, nesterov: bool, weight_decay: f64) -> Self {
        Self { velocity: vec![0.0; num_params], learning_rate, momentum, nesterov, weight_decay }
    }

    pub fn plain(num_params: usize, learning_rate: f64) -> Self {
        Self::new(num_params, learning_rate, 0.0, false, 0.0)
    }
}

/// One optimizer step at learning rate `lr_now`. Non-finite gradients
/// abort the step without touching the model.
pub fn sgd_step(model: &mut Mlp, grads: &[f64], opt: &mut OptimizerState, lr_now: f64) -> Result<()> {
    let n = model.num_params();
    if grads.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: grads.len() });
    }
    if opt.velocity.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: opt.velocity.len() });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let (beta, wd) = (opt.momentum, opt.weight_decay);
    for ((theta, v), g) in model.params.iter_mut().zip(opt.velocity.iter_mut()).zip(grads) {
        let step = lr_now * (g + wd * *theta);
        *v = beta * *v - step;
        if opt.nesterov {
            *theta += beta * *v - step;
        } else {
            *theta += *v;
        }
    }
    Ok(())
}

/// `eta * cos(7 pi k / (16 total))`.
pub fn cosine_lr(eta: f64, step: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("total step count must be positive".into()));
    }
    if step > total {
        return Err(Error::Config(format!("step {step} beyond total {total}")));
    }
    Ok(eta * (7.0 * PI * step as f64 / (16.0 * total as f64)).cos())
}

/// Exponential moving average of the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaShadow {
    pub params: Vec<f64>,
    pub decay: f64,
}

impl EmaShadow {
    /// Shadow initialized at the model's current parameters.
    pub fn new(model: &Mlp, decay: f64) -> Self {
        Self { params: model.params().to_vec(), decay }
    }

    pub fn update(&mut self, model: &Mlp) -> Result<()> {
        if model.num_params() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), found: model.num_params() });
        }
        let d = self.decay;
        for (s, &t) in self.params.iter_mut().zip(model.params()) {
            *s = d * *s + (1.0 - d) * t;
        }
        Ok(())
    }

    /// The shadow as a model with `template`'s architecture.
    pub fn to_model(&self, template: &Mlp) -> Result<Mlp> {
        template.with_params(self.params.clone())
    }
}

/// Functional form of [`EmaShadow::update`].
pub fn ema_update(shadow: &EmaShadow, model: &Mlp) -> Result<EmaShadow> {
    let mut next = shadow.clone();
    next.update(model)?;
    Ok(next)
}

/// Versioned JSON checkpoint: layer sizes header plus the flat parameter
/// vector in the layout documented at the top of this module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub params: Vec<f64>,
}

impl From<&Mlp> for Checkpoint {
    fn from(m: &Mlp) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            sizes: m.sizes.clone(),
            activation: m.activation,
            dropout_rate: m.dropout_rate,
            params: m.params.clone(),
        }
    }
}

impl Checkpoint {
    pub fn into_model(self) -> Result<Mlp> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", self.format_version)));
        }
        Mlp::from_params(&self.sizes, self.activation, self.dropout_rate, self.params)
    }
}

pub fn save_checkpoint(model: &Mlp, path: &Path) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::from(model))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Mlp> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str::<Checkpoint>(&text)?.into_model()
}

/// Cross-entropy of a one-hot label against a prediction, and its gradient
/// with respect to the probabilities.
pub fn hard_label_loss(probs: &ProbDist, class: usize) -> (f64, Vec<f64>) {
    let p = probs.probs()[class].max(EPS);
    let mut grad = vec![0.0; probs.num_classes()];
    grad[class] = -1.0 / p;
    (-p.ln(), grad)
}
