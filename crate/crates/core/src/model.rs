//! Fully connected classifier with hand-written backpropagation.
//!
//! Parameters live in a flat [`ParamVector`]. Layer `l` occupies a weight
//! block of `out·in` entries (row-major, one row per output unit) followed by
//! a bias block of `out` entries; layers are laid out in order.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::vectors::{ParamVector, RngStream, VectorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("parameter vector has length {actual}, spec needs {expected}")]
    ParamLength { expected: usize, actual: usize },
    #[error("feature width {actual} does not match input width {expected}")]
    FeatureWidth { expected: usize, actual: usize },
    #[error("batch features hold {values} values, expected {rows} rows of width {width}")]
    RaggedBatch { values: usize, rows: usize, width: usize },
    #[error("label {label} at example {index} is outside 0..{classes}")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training setting: {0}")]
    InvalidTraining(String),
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Layer widths `(input, hidden..., output)` plus the hidden activation.
/// The output layer is always softmax with cross-entropy loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    widths: Vec<usize>,
    activation: Activation,
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    weights: usize,
    biases: usize,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self, ModelError> {
        if widths.len() < 2 {
            return Err(ModelError::InvalidSpec(format!("need at least 2 widths, got {}", widths.len())));
        }
        if let Some(i) = widths.iter().position(|&w| w == 0) {
            return Err(ModelError::InvalidSpec(format!("width {i} is zero")));
        }
        Ok(Self { widths, activation })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    inputs: w[0],
                    outputs: w[1],
                    weights: offset,
                    biases: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                shape
            })
            .collect()
    }

    /// Index range of the output layer's bias block.
    pub fn output_bias_range(&self) -> std::ops::Range<usize> {
        let last = *self.layers().last().unwrap();
        last.biases..last.biases + last.outputs
    }

    fn check_params(&self, params: &ParamVector) -> Result<(), ModelError> {
        if params.dim() != self.param_count() {
            return Err(ModelError::ParamLength { expected: self.param_count(), actual: params.dim() });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch<'_>) -> Result<(), ModelError> {
        if batch.width != self.input_width() {
            return Err(ModelError::FeatureWidth { expected: self.input_width(), actual: batch.width });
        }
        let classes = self.num_classes();
        if let Some(index) = batch.labels.iter().position(|&l| l >= classes) {
            return Err(ModelError::LabelOutOfRange { index, label: batch.labels[index], classes });
        }
        Ok(())
    }
}

/// A borrowed, row-major view of examples and their labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    features: &'a [f64],
    width: usize,
    labels: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [f64], width: usize, labels: &'a [usize]) -> Result<Self, ModelError> {
        if features.len() != width * labels.len() {
            return Err(ModelError::RaggedBatch { values: features.len(), rows: labels.len(), width });
        }
        Ok(Self { features, width, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

/// Scratch buffers for one forward/backward pass.
struct Workspace {
    layers: Vec<LayerShape>,
    // Pre-activations and activations per layer; index 0 of `acts` is the input.
    pre: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn new(spec: &MlpSpec) -> Self {
        let layers = spec.layers();
        let widest = spec.widths.iter().copied().max().unwrap_or(0);
        Self {
            pre: layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
            acts: spec.widths.iter().map(|&w| vec![0.0; w]).collect(),
            layers,
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
        }
    }

    /// Fills `pre`/`acts` for one example; the final layer's logits are left
    /// in `pre.last()`.
    fn forward(&mut self, activation: Activation, params: &[f64], x: &[f64]) {
        self.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = self.acts.split_at_mut(l + 1);
            let input = &before[l];
            let pre = &mut self.pre[l];
            for o in 0..layer.outputs {
                let row = &params[layer.weights + o * layer.inputs..layer.weights + (o + 1) * layer.inputs];
                let mut z = params[layer.biases + o];
                for (w, a) in row.iter().zip(input.iter()) {
                    z += w * a;
                }
                pre[o] = z;
            }
            let out = &mut after[0];
            if l == last {
                out.copy_from_slice(pre);
            } else {
                for (a, &z) in out.iter_mut().zip(pre.iter()) {
                    *a = activation.apply(z);
                }
            }
        }
    }

    fn logits(&self) -> &[f64] {
        self.pre.last().unwrap()
    }

    /// Cross-entropy of the current logits against `label`, via log-sum-exp.
    fn loss(&self, label: usize) -> f64 {
        let logits = self.logits();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        max + sum.ln() - logits[label]
    }

    /// Adds `scale · ∂loss/∂params` for the example last passed to `forward`.
    fn backward(&mut self, activation: Activation, params: &[f64], label: usize, scale: f64, grad: &mut [f64]) {
        let logits = self.pre.last().unwrap();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        self.delta.clear();
        self.delta.extend(logits.iter().enumerate().map(|(c, z)| {
            let p = (z - max).exp() / sum;
            scale * (p - if c == label { 1.0 } else { 0.0 })
        }));

        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let input = &self.acts[l];
            for o in 0..layer.outputs {
                let d = self.delta[o];
                grad[layer.biases + o] += d;
                let row = &mut grad[layer.weights + o * layer.inputs..layer.weights + (o + 1) * layer.inputs];
                for (g, a) in row.iter_mut().zip(input.iter()) {
                    *g += d * a;
                }
            }
            if l == 0 {
                break;
            }
            self.delta_prev.clear();
            self.delta_prev.resize(layer.inputs, 0.0);
            for o in 0..layer.outputs {
                let d = self.delta[o];
                let row = &params[layer.weights + o * layer.inputs..layer.weights + (o + 1) * layer.inputs];
                for (acc, w) in self.delta_prev.iter_mut().zip(row) {
                    *acc += w * d;
                }
            }
            let pre = &self.pre[l - 1];
            for (i, acc) in self.delta_prev.iter_mut().enumerate() {
                *acc *= activation.derivative(pre[i], input[i]);
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
    }
}

/// Fan-in scaled initialization: every weight is drawn from
/// `N(0, 1/fan_in)`, every bias starts at zero.
pub fn init_params(spec: &MlpSpec, stream: &mut RngStream) -> ParamVector {
    let mut values = Vec::with_capacity(spec.param_count());
    for layer in spec.layers() {
        let std = 1.0 / (layer.inputs as f64).sqrt();
        values.extend((0..layer.inputs * layer.outputs).map(|_| std * stream.next_gaussian()));
        values.extend(std::iter::repeat_n(0.0, layer.outputs));
    }
    ParamVector::new(values).expect("gaussian draws are finite")
}

/// Mean cross-entropy over the batch.
pub fn forward_loss(spec: &MlpSpec, params: &ParamVector, batch: &Batch<'_>) -> Result<f64, ModelError> {
    spec.check_params(params)?;
    spec.check_batch(batch)?;
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut ws = Workspace::new(spec);
    let mut total = 0.0;
    for i in 0..batch.len() {
        ws.forward(spec.activation, params.as_slice(), batch.row(i));
        total += ws.loss(batch.label(i));
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of [`forward_loss`] with respect to the parameters.
pub fn backward_grad(spec: &MlpSpec, params: &ParamVector, batch: &Batch<'_>) -> Result<ParamVector, ModelError> {
    spec.check_params(params)?;
    spec.check_batch(batch)?;
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut ws = Workspace::new(spec);
    let mut grad = vec![0.0; spec.param_count()];
    let scale = 1.0 / batch.len() as f64;
    for i in 0..batch.len() {
        ws.forward(spec.activation, params.as_slice(), batch.row(i));
        ws.backward(spec.activation, params.as_slice(), batch.label(i), scale, &mut grad);
    }
    Ok(ParamVector::new(grad)?)
}

/// Client-side SGD settings. These are separate from the server's global
/// learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTraining {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for LocalTraining {
    fn default() -> Self {
        Self { learning_rate: 0.01, batch_size: 4, epochs: 1 }
    }
}

/// Plain mini-batch SGD from `global`, returning `w_final − global`.
///
/// The shard is reshuffled at the start of every epoch using `stream`; the
/// last mini-batch of an epoch may be smaller than `batch_size`.
pub fn local_train(
    spec: &MlpSpec,
    global: &ParamVector,
    shard: &Batch<'_>,
    settings: &LocalTraining,
    stream: &mut RngStream,
) -> Result<ParamVector, ModelError> {
    spec.check_params(global)?;
    spec.check_batch(shard)?;
    if shard.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if !(settings.learning_rate > 0.0 && settings.learning_rate.is_finite()) {
        return Err(ModelError::InvalidTraining(format!("learning rate {}", settings.learning_rate)));
    }
    if settings.batch_size == 0 {
        return Err(ModelError::InvalidTraining("batch size 0".into()));
    }

    let mut params = global.as_slice().to_vec();
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut ws = Workspace::new(spec);

    for _ in 0..settings.epochs {
        order.shuffle(stream);
        for chunk in order.chunks(settings.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                ws.forward(spec.activation, &params, shard.row(i));
                ws.backward(spec.activation, &params, shard.label(i), scale, &mut grad);
            }
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= settings.learning_rate * g;
            }
        }
    }

    let update = params.iter().zip(global.as_slice()).map(|(p, w)| p - w).collect();
    Ok(ParamVector::new(update)?)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate().skip(1) {
        if z > logits[best] {
            best = i;
        }
    }
    best
}

/// Predicted class for every example in `batch`.
pub fn predict(spec: &MlpSpec, params: &ParamVector, batch: &Batch<'_>) -> Result<Vec<usize>, ModelError> {
    spec.check_params(params)?;
    if batch.width != spec.input_width() {
        return Err(ModelError::FeatureWidth { expected: spec.input_width(), actual: batch.width });
    }
    let mut ws = Workspace::new(spec);
    Ok((0..batch.len())
        .map(|i| {
            ws.forward(spec.activation, params.as_slice(), batch.row(i));
            argmax(ws.logits())
        })
        .collect())
}

/// Fraction of examples whose predicted class matches the label.
pub fn evaluate(spec: &MlpSpec, params: &ParamVector, test: &Batch<'_>) -> Result<f64, ModelError> {
    if test.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    spec.check_batch(test)?;
    let predictions = predict(spec, params, test)?;
    let correct = predictions.iter().enumerate().filter(|&(i, &p)| p == test.label(i)).count();
    Ok(correct as f64 / test.len() as f64)
}
