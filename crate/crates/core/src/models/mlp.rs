//! Fully connected classifier trained with mini-batch SGD on softmax
//! cross-entropy.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::Dataset;
use crate::seeded_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub neurons: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(1..=10).contains(&self.hidden_layers) {
            return Err(ModelError::Config(format!(
                "hidden_layers {} not in 1..=10",
                self.hidden_layers
            )));
        }
        if self.neurons.len() != self.hidden_layers {
            return Err(ModelError::Config(format!(
                "{} neuron counts given for {} hidden layers",
                self.neurons.len(),
                self.hidden_layers
            )));
        }
        if self.neurons.iter().any(|&n| n == 0) {
            return Err(ModelError::Config(
                "every hidden layer needs at least one neuron".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Dense layer, weights stored row-major as `outputs x inputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Dense {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in +-sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut crate::Rng) -> Dense {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Dense {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }

    pub fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub activation: Activation,
    pub hidden: Vec<Dense>,
    pub output: Dense,
}

/// Gradients laid out like the model's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGradients {
    pub hidden: Vec<Dense>,
    pub output: Dense,
}

impl MlpGradients {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(self.hidden.iter().chain(std::iter::once(&self.output)))
    }
}

fn flatten_layers<'a>(layers: impl Iterator<Item = &'a Dense>) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.bias);
    }
    out
}

impl MlpModel {
    /// Fresh model with seeded Glorot-uniform weights.
    pub fn init(widths: &[usize], activation: Activation, seed: u64) -> MlpModel {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let mut rng = seeded_rng(seed);
        let n = widths.len();
        let hidden = widths
            .windows(2)
            .take(n - 2)
            .map(|w| Dense::glorot(w[0], w[1], &mut rng))
            .collect();
        let output = Dense::glorot(widths[n - 2], widths[n - 1], &mut rng);
        MlpModel {
            activation,
            hidden,
            output,
        }
    }

    pub fn input_width(&self) -> usize {
        self.hidden.first().unwrap_or(&self.output).inputs
    }

    pub fn output_width(&self) -> usize {
        self.output.outputs
    }

    /// Layer widths `[n0, n1, ..., nL]`.
    pub fn topology(&self) -> Vec<usize> {
        let mut t = vec![self.input_width()];
        t.extend(self.hidden.iter().map(|l| l.outputs));
        t.push(self.output.outputs);
        t
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.hidden.iter().chain(std::iter::once(&self.output))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(Dense::param_count).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        flatten_layers(self.layers())
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<(), ModelError> {
        if params.len() != self.param_count() {
            return Err(ModelError::Shape(format!(
                "{} parameters for a model of {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut rest = params;
        for l in self.hidden.iter_mut().chain(std::iter::once(&mut self.output)) {
            let (w, r) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    /// Output logits (before softmax).
    pub fn logits(&self, row: &[f64]) -> Vec<f64> {
        let a = trunk_forward(&self.hidden, self.activation, row);
        let mut out = Vec::new();
        self.output.forward(&a, &mut out);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, rows: &[&[f64]], labels: &[usize]) -> f64 {
        rows.iter()
            .zip(labels)
            .map(|(r, &y)| {
                let z = self.logits(r);
                let (lse, _) = log_softmax(&z);
                lse - z[y]
            })
            .sum::<f64>()
            / rows.len() as f64
    }

    pub fn loss_and_gradients(&self, rows: &[&[f64]], labels: &[usize]) -> (f64, MlpGradients) {
        let mut grads = MlpGradients {
            hidden: self.hidden.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
            output: Dense::zeros(self.output.inputs, self.output.outputs),
        };
        let mut loss = 0.0;
        for (r, &y) in rows.iter().zip(labels) {
            loss += accumulate_gradients(
                &self.hidden,
                &self.output,
                self.activation,
                r,
                y,
                &mut grads.hidden,
                &mut grads.output,
            );
        }
        let scale = 1.0 / rows.len() as f64;
        for g in grads.hidden.iter_mut().chain(std::iter::once(&mut grads.output)) {
            g.weights.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= scale);
        }
        (loss * scale, grads)
    }
}

pub(crate) fn trunk_forward(hidden: &[Dense], act: Activation, row: &[f64]) -> Vec<f64> {
    let mut a = row.to_vec();
    let mut z = Vec::new();
    for layer in hidden {
        layer.forward(&a, &mut z);
        a.clear();
        a.extend(z.iter().map(|&v| act.apply(v)));
    }
    a
}

/// Returns (log-sum-exp, softmax probabilities).
fn log_softmax(z: &[f64]) -> (f64, Vec<f64>) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (m + sum.ln(), exps.into_iter().map(|e| e / sum).collect())
}

/// Backpropagates one sample through `hidden` + `head`, adding into the
/// gradient buffers. Returns the sample's cross-entropy loss.
pub(crate) fn accumulate_gradients(
    hidden: &[Dense],
    head: &Dense,
    act: Activation,
    row: &[f64],
    label: usize,
    hidden_grads: &mut [Dense],
    head_grad: &mut Dense,
) -> f64 {
    // forward, keeping pre-activations and activations
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(hidden.len());
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(hidden.len() + 1);
    post.push(row.to_vec());
    for layer in hidden {
        let mut z = Vec::new();
        layer.forward(post.last().unwrap(), &mut z);
        let a = z.iter().map(|&v| act.apply(v)).collect();
        pre.push(z);
        post.push(a);
    }
    let mut logits = Vec::new();
    head.forward(post.last().unwrap(), &mut logits);
    let (lse, probs) = log_softmax(&logits);
    let loss = lse - logits[label];

    // dL/dz for the head
    let mut delta: Vec<f64> = probs;
    delta[label] -= 1.0;
    add_outer(head_grad, &delta, post.last().unwrap());
    let mut upstream = back_through(head, &delta);

    for l in (0..hidden.len()).rev() {
        let d: Vec<f64> = upstream
            .iter()
            .zip(&pre[l])
            .zip(&post[l + 1])
            .map(|((g, &z), &a)| g * act.derivative(z, a))
            .collect();
        add_outer(&mut hidden_grads[l], &d, &post[l]);
        if l > 0 {
            upstream = back_through(&hidden[l], &d);
        }
    }
    loss
}

fn add_outer(grad: &mut Dense, delta: &[f64], input: &[f64]) {
    for (o, &d) in delta.iter().enumerate() {
        let row = &mut grad.weights[o * grad.inputs..(o + 1) * grad.inputs];
        for (w, &x) in row.iter_mut().zip(input) {
            *w += d * x;
        }
        grad.bias[o] += d;
    }
}

fn back_through(layer: &Dense, delta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; layer.inputs];
    for (o, &d) in delta.iter().enumerate() {
        for (i, v) in out.iter_mut().enumerate() {
            *v += d * layer.weight(o, i);
        }
    }
    out
}

pub(crate) fn sgd_step(layer: &mut Dense, grad: &Dense, lr: f64) {
    for (w, g) in layer.weights.iter_mut().zip(&grad.weights) {
        *w -= lr * g;
    }
    for (b, g) in layer.bias.iter_mut().zip(&grad.bias) {
        *b -= lr * g;
    }
}

/// Trains on the dataset's train split. `epochs = 0` returns the initialized
/// model. The result is a pure function of `(cfg, data)`.
pub fn train_mlp(cfg: &MlpConfig, data: &Dataset) -> Result<MlpModel, ModelError> {
    cfg.validate()?;
    if data.num_classes() < 2 {
        return Err(ModelError::Data("mlp training needs at least two classes".into()));
    }
    if data.train().is_empty() {
        return Err(ModelError::Data("empty train split".into()));
    }
    let mut widths = vec![data.width()];
    widths.extend(&cfg.neurons);
    widths.push(data.num_classes());
    let mut model = MlpModel::init(&widths, cfg.activation, cfg.seed);
    let mut rng = seeded_rng(cfg.seed.wrapping_add(0x5eed));
    let mut order = data.train().to_vec();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let rows: Vec<&[f64]> = batch.iter().map(|&i| data.row(i)).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let (loss, grads) = model.loss_and_gradients(&rows, &labels);
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            for (layer, g) in model.hidden.iter_mut().zip(&grads.hidden) {
                sgd_step(layer, g, cfg.learning_rate);
            }
            sgd_step(&mut model.output, &grads.output, cfg.learning_rate);
        }
        if !model.is_finite() {
            return Err(ModelError::Diverged { epoch });
        }
    }
    Ok(model)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict_mlp(model: &MlpModel, row: &[f64]) -> Result<usize, ModelError> {
    if row.len() != model.input_width() {
        return Err(ModelError::Shape(format!(
            "row width {} but model expects {}",
            row.len(),
            model.input_width()
        )));
    }
    Ok(argmax(&model.logits(row)))
}
