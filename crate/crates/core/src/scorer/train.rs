//! Backward pass, Adam and the training loop.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    bce_term, features_unchecked, sigmoid, ScorerModel, TrainingExample, DEFAULT_HIDDEN, PRED_EPS,
};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            dropout: 0.5,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.epsilon <= 0.0
        {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Per-example dropout multipliers for each hidden layer: 0 for a dropped
/// unit, `1 / (1 - p)` for a kept one.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub hidden: Vec<Vec<f64>>,
}

impl DropoutMasks {
    pub fn sample(model: &ScorerModel, rate: f64, rng: &mut Rng) -> Self {
        let keep = 1.0 / (1.0 - rate);
        let hidden = model.layers[..model.layers.len() - 1]
            .iter()
            .map(|l| {
                (0..l.outputs)
                    .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                    .collect()
            })
            .collect();
        DropoutMasks { hidden }
    }
}

/// Gradients with the same shape as a [`ScorerModel`].
///
/// Holds the gradient of the weighted loss *sum*; divide by
/// `total_weight` for the gradient of the weighted mean loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub bilinear: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub total_weight: f64,
    pub loss_sum: f64,
}

impl Gradients {
    pub fn zeros_like(model: &ScorerModel) -> Self {
        Gradients {
            bilinear: vec![0.0; model.bilinear.len()],
            weights: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
            total_weight: 0.0,
            loss_sum: 0.0,
        }
    }

    fn reset(&mut self) {
        self.bilinear.fill(0.0);
        self.weights.iter_mut().for_each(|w| w.fill(0.0));
        self.biases.iter_mut().for_each(|b| b.fill(0.0));
        self.total_weight = 0.0;
        self.loss_sum = 0.0;
    }

    /// Flat view in the order bilinear, then per layer weights and bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.bilinear.clone();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// Gradient of the weighted mean loss, flattened.
    pub fn mean_flatten(&self) -> Vec<f64> {
        let s = 1.0 / self.total_weight;
        self.flatten().into_iter().map(|g| g * s).collect()
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.bilinear];
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w);
            out.push(b);
        }
        out
    }
}

fn param_slices_mut(model: &mut ScorerModel) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = vec![&mut model.bilinear];
    for l in &mut model.layers {
        out.push(&mut l.weights);
        out.push(&mut l.bias);
    }
    out
}

/// Activations cached by the forward pass.
struct Workspace {
    /// `acts[l]` is the input to layer `l`; `acts[0]` is the feature vector.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn new(model: &ScorerModel) -> Self {
        let widest = model
            .layers
            .iter()
            .map(|l| l.inputs.max(l.outputs))
            .max()
            .unwrap_or(1);
        Workspace {
            acts: Vec::with_capacity(model.layers.len()),
            pre: model.layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
        }
    }
}

/// Forward pass with optional dropout; returns the logit.
fn forward_cached(
    model: &ScorerModel,
    ex: &TrainingExample,
    masks: Option<&DropoutMasks>,
    ws: &mut Workspace,
) -> f64 {
    ws.acts.clear();
    ws.acts.push(features_unchecked(
        &ex.context,
        &ex.response,
        &model.bilinear,
    ));
    let last = model.layers.len() - 1;
    for (l, layer) in model.layers.iter().enumerate() {
        let pre = &mut ws.pre[l];
        layer.forward_into(&ws.acts[l], pre);
        if l < last {
            let mut h: Vec<f64> = pre.iter().map(|z| z.max(0.0)).collect();
            if let Some(m) = masks {
                for (v, k) in h.iter_mut().zip(&m.hidden[l]) {
                    *v *= k;
                }
            }
            ws.acts.push(h);
        }
    }
    ws.pre[last][0]
}

/// Accumulates `weight * dloss/dtheta` for one example into `grads` and
/// returns its unweighted loss.
fn accumulate(
    model: &ScorerModel,
    ex: &TrainingExample,
    masks: Option<&DropoutMasks>,
    ws: &mut Workspace,
    grads: &mut Gradients,
) -> f64 {
    let z = forward_cached(model, ex, masks, ws);
    let p = sigmoid(z);
    let loss = bce_term(p, ex.label);
    // the loss is flat where the clamp is active
    let dz = if (PRED_EPS..=1.0 - PRED_EPS).contains(&p) {
        ex.weight * (p - ex.label)
    } else {
        0.0
    };
    grads.total_weight += ex.weight;
    grads.loss_sum += ex.weight * loss;
    if dz == 0.0 {
        return loss;
    }

    ws.delta.clear();
    ws.delta.push(dz);
    for l in (0..model.layers.len()).rev() {
        let layer = &model.layers[l];
        let input = &ws.acts[l];
        let gw = &mut grads.weights[l];
        let gb = &mut grads.biases[l];
        ws.delta_prev.clear();
        ws.delta_prev.resize(layer.inputs, 0.0);
        for (j, &d) in ws.delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb[j] += d;
            let row = j * layer.inputs..(j + 1) * layer.inputs;
            for (g, x) in gw[row.clone()].iter_mut().zip(input) {
                *g += d * x;
            }
            for (dp, w) in ws.delta_prev.iter_mut().zip(&layer.weights[row]) {
                *dp += d * w;
            }
        }
        if l > 0 {
            let pre = &ws.pre[l - 1];
            let mask = masks.map(|m| &m.hidden[l - 1]);
            for (i, dp) in ws.delta_prev.iter_mut().enumerate() {
                if pre[i] <= 0.0 {
                    *dp = 0.0;
                } else if let Some(m) = mask {
                    *dp *= m[i];
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
    }
    // delta_prev now holds dloss/dfeatures; the bilinear scalar sits at `dim`
    let dim = model.dim;
    let ds = ws.delta_prev[dim];
    if ds != 0.0 {
        for (a, q) in ex.context.iter().enumerate() {
            let s = ds * q;
            for (g, r) in grads.bilinear[a * dim..(a + 1) * dim]
                .iter_mut()
                .zip(&ex.response)
            {
                *g += s * r;
            }
        }
    }
    loss
}

/// Analytic gradients of the weighted loss sum over `batch`. With `masks`
/// (one per example) dropout is applied exactly as given; without, dropout
/// is off.
pub fn gradients(
    model: &ScorerModel,
    batch: &[TrainingExample],
    masks: Option<&[DropoutMasks]>,
) -> Result<Gradients> {
    if let Some(m) = masks {
        if m.len() != batch.len() {
            return Err(Error::invalid("one dropout mask set per example required"));
        }
    }
    check_examples(model, batch)?;
    let mut grads = Gradients::zeros_like(model);
    let mut ws = Workspace::new(model);
    for (i, ex) in batch.iter().enumerate() {
        accumulate(model, ex, masks.map(|m| &m[i]), &mut ws, &mut grads);
    }
    Ok(grads)
}

/// Weighted mean loss with fixed dropout masks (or none). Used by the
/// finite-difference checks.
pub fn loss_with_masks(
    model: &ScorerModel,
    batch: &[TrainingExample],
    masks: Option<&[DropoutMasks]>,
) -> f64 {
    let mut ws = Workspace::new(model);
    let mut total = 0.0;
    let mut wsum = 0.0;
    for (i, ex) in batch.iter().enumerate() {
        let z = forward_cached(model, ex, masks.map(|m| &m[i]), &mut ws);
        total += ex.weight * bce_term(sigmoid(z), ex.label);
        wsum += ex.weight;
    }
    total / wsum
}

/// Sign pattern of every hidden pre-activation over a batch; a change
/// between two parameter settings means a ReLU kink was crossed.
pub fn relu_pattern(model: &ScorerModel, batch: &[TrainingExample]) -> Vec<bool> {
    let mut ws = Workspace::new(model);
    let mut out = Vec::new();
    for ex in batch {
        forward_cached(model, ex, None, &mut ws);
        for pre in &ws.pre[..ws.pre.len() - 1] {
            out.extend(pre.iter().map(|z| *z > 0.0));
        }
    }
    out
}

fn check_examples(model: &ScorerModel, examples: &[TrainingExample]) -> Result<()> {
    for ex in examples {
        for v in [&ex.context, &ex.response] {
            if v.len() != model.dim {
                return Err(Error::DimensionMismatch {
                    expected: model.dim,
                    actual: v.len(),
                });
            }
        }
        if !(0.0..=1.0).contains(&ex.label) {
            return Err(Error::invalid(format!("label {} outside [0, 1]", ex.label)));
        }
        if !(ex.weight > 0.0 && ex.weight.is_finite()) {
            return Err(Error::invalid(format!(
                "example weight {} must be positive",
                ex.weight
            )));
        }
    }
    Ok(())
}

struct Adam {
    m: Gradients,
    v: Gradients,
    step: i32,
}

impl Adam {
    fn new(model: &ScorerModel) -> Self {
        Adam {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut ScorerModel, grads: &Gradients, config: &TrainConfig) {
        self.step += 1;
        let scale = 1.0 / grads.total_weight;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = config.learning_rate;
        let eps = config.epsilon;
        let params = param_slices_mut(model);
        let g = grads.slices();
        let m = slices_mut(&mut self.m);
        let v = slices_mut(&mut self.v);
        for (((p, g), m), v) in params.into_iter().zip(g).zip(m).zip(v) {
            for i in 0..p.len() {
                let gi = g[i] * scale;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

fn slices_mut(g: &mut Gradients) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = vec![&mut g.bilinear];
    for (w, b) in g.weights.iter_mut().zip(g.biases.iter_mut()) {
        out.push(w);
        out.push(b);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ScorerModel,
    /// Mean weighted training loss per epoch (dropout active).
    pub loss_trace: Vec<f64>,
    /// Validation loss per epoch, when a validation set was given.
    pub validation_trace: Vec<f64>,
    pub best_epoch: Option<usize>,
}

fn require_both_classes(examples: &[TrainingExample]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    let hard = examples.iter().all(|e| e.label == 0.0 || e.label == 1.0);
    if hard {
        let pos = examples.iter().any(|e| e.label == 1.0);
        let neg = examples.iter().any(|e| e.label == 0.0);
        if !(pos && neg) {
            return Err(Error::invalid(
                "hard-labelled training data needs both classes",
            ));
        }
    }
    Ok(())
}

/// Trains a fresh model; initialization and shuffling both derive from
/// `config.seed`.
pub fn train(examples: &[TrainingExample], config: &TrainConfig) -> Result<TrainOutcome> {
    let model = init_model(examples, config)?;
    train_from(model, examples, config, 0)
}

fn init_model(examples: &[TrainingExample], config: &TrainConfig) -> Result<ScorerModel> {
    config.validate()?;
    let dim = examples
        .first()
        .map(|e| e.context.len())
        .ok_or_else(|| Error::invalid("no training examples"))?;
    ScorerModel::init(
        dim,
        &config.hidden,
        config.dropout,
        &mut rng::derive(config.seed, "init"),
    )
}

/// Continues training `model` (warm start). `stream` selects an
/// independent shuffling/dropout stream so successive fine-tuning rounds
/// do not replay the same randomness.
pub fn train_from(
    model: ScorerModel,
    examples: &[TrainingExample],
    config: &TrainConfig,
    stream: u64,
) -> Result<TrainOutcome> {
    run(model, examples, None, config, stream)
}

/// Like [`train`], but tracks validation loss each epoch and returns the
/// parameters of the best validation epoch.
pub fn train_with_validation(
    examples: &[TrainingExample],
    validation: &[TrainingExample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if validation.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let model = init_model(examples, config)?;
    run(model, examples, Some(validation), config, 0)
}

fn run(
    mut model: ScorerModel,
    examples: &[TrainingExample],
    validation: Option<&[TrainingExample]>,
    config: &TrainConfig,
    stream: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut outcome = TrainOutcome {
        model: model.clone(),
        loss_trace: Vec::with_capacity(config.epochs),
        validation_trace: Vec::new(),
        best_epoch: None,
    };
    if config.epochs == 0 {
        return Ok(outcome);
    }
    require_both_classes(examples)?;
    check_examples(&model, examples)?;
    if let Some(v) = validation {
        check_examples(&model, v)?;
    }
    model.dropout = config.dropout;

    let mut rng = rng::derive_indexed(config.seed, "train", stream);
    let mut adam = Adam::new(&model);
    let mut grads = Gradients::zeros_like(&model);
    let mut ws = Workspace::new(&model);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut best = f64::INFINITY;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.reset();
            for &i in batch {
                let masks = (config.dropout > 0.0)
                    .then(|| DropoutMasks::sample(&model, config.dropout, &mut rng));
                accumulate(&model, &examples[i], masks.as_ref(), &mut ws, &mut grads);
            }
            epoch_loss += grads.loss_sum;
            epoch_weight += grads.total_weight;
            adam.update(&mut model, &grads, config);
        }
        let mean = epoch_loss / epoch_weight;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Numerical(format!(
                "training diverged at epoch {epoch} (loss {mean}); try a smaller learning rate than {}",
                config.learning_rate
            )));
        }
        outcome.loss_trace.push(mean);
        if let Some(v) = validation {
            let vl = loss_with_masks(&model, v, None);
            outcome.validation_trace.push(vl);
            if vl < best {
                best = vl;
                outcome.best_epoch = Some(epoch);
                outcome.model = model.clone();
            }
        }
    }
    if validation.is_none() {
        outcome.model = model;
    }
    Ok(outcome)
}

/// Fraction of examples where `score >= 0.5` agrees with `label >= 0.5`.
pub fn accuracy(model: &ScorerModel, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("accuracy over an empty set"));
    }
    let mut correct = 0usize;
    for ex in examples {
        let s = model.score(&ex.context, &ex.response)?;
        if (s >= 0.5) == (ex.label >= 0.5) {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}
