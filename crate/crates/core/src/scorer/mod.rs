//! The learned response scorer.
//!
//! Input features are `[v_q ; v_q^T M v_r ; v_r]`: the context vector, one
//! bilinear interaction scalar, and the response vector. An MLP with ReLU
//! hidden layers and a sigmoid output maps them to a score in `(0, 1)`.
//! Forward and backward passes are written out by hand; training uses
//! mini-batch Adam on (optionally soft-label) binary cross-entropy.

mod train;

use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use train::{
    accuracy, gradients, loss_with_masks, relu_pattern, train, train_from, train_with_validation,
    DropoutMasks, Gradients, TrainConfig, TrainOutcome,
};

/// Predictions are clamped to `[PRED_EPS, 1 - PRED_EPS]` inside the loss.
pub const PRED_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub context: Vec<f64>,
    pub response: Vec<f64>,
    /// Hard 0/1 label or a soft label in `[0, 1]`.
    pub label: f64,
    pub weight: f64,
}

impl TrainingExample {
    pub fn new(context: Vec<f64>, response: Vec<f64>, label: f64) -> Self {
        TrainingExample {
            context,
            response,
            label,
            weight: 1.0,
        }
    }
}

/// A dense layer, weights stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Xavier/Glorot uniform weights, zero bias.
    fn xavier(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        Dense {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| dist.sample(rng)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.inputs..(j + 1) * self.inputs]
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.bias[j] + fast_dot(self.row(j), x);
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
pub(crate) fn fast_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerModel {
    pub dim: usize,
    /// `dim x dim`, row-major.
    pub bilinear: Vec<f64>,
    /// Hidden layers followed by the single-unit output layer.
    pub layers: Vec<Dense>,
    pub dropout: f64,
}

pub const DEFAULT_HIDDEN: [usize; 3] = [256, 512, 128];

impl ScorerModel {
    /// Fresh model: Xavier-uniform MLP layers and a bilinear matrix of
    /// `0.01 * I` plus uniform noise in `[-1e-3, 1e-3]`.
    pub fn init(dim: usize, hidden: &[usize], dropout: f64, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        let noise = Uniform::new_inclusive(-1e-3, 1e-3);
        let mut bilinear = vec![0.0; dim * dim];
        for a in 0..dim {
            for b in 0..dim {
                bilinear[a * dim + b] = if a == b { 0.01 } else { 0.0 } + noise.sample(rng);
            }
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut inputs = 2 * dim + 1;
        for &h in hidden.iter().chain(std::iter::once(&1)) {
            layers.push(Dense::xavier(inputs, h, rng));
            inputs = h;
        }
        Ok(ScorerModel {
            dim,
            bilinear,
            layers,
            dropout,
        })
    }

    /// Same shape as [`ScorerModel::init`] with every parameter zero.
    pub fn zeros(dim: usize, hidden: &[usize], dropout: f64) -> Self {
        let mut layers = Vec::new();
        let mut inputs = 2 * dim + 1;
        for &h in hidden.iter().chain(std::iter::once(&1)) {
            layers.push(Dense::zeros(inputs, h));
            inputs = h;
        }
        ScorerModel {
            dim,
            bilinear: vec![0.0; dim * dim],
            layers,
            dropout,
        }
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.outputs)
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.bilinear.len()
            + self
                .layers
                .iter()
                .map(|l| l.weights.len() + l.bias.len())
                .sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.bilinear.iter().all(|x| x.is_finite())
            && self
                .layers
                .iter()
                .all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    pub fn bilinear_term(&self, context: &[f64], response: &[f64]) -> f64 {
        bilinear_term(&self.bilinear, self.dim, context, response)
    }

    /// Logit of the score (inference, no dropout).
    pub fn logit(&self, context: &[f64], response: &[f64]) -> Result<f64> {
        self.check_dims(context, response)?;
        let mut x = features_unchecked(context, response, &self.bilinear);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.outputs];
            layer.forward_into(&x, &mut out);
            if l + 1 < self.layers.len() {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            x = out;
        }
        let z = x[0];
        if !z.is_finite() {
            return Err(Error::Numerical(
                "non-finite logit; model parameters are corrupt".into(),
            ));
        }
        Ok(z)
    }

    /// Score in `(0, 1)`. Saturated logits are pulled back inside the open
    /// interval.
    pub fn score(&self, context: &[f64], response: &[f64]) -> Result<f64> {
        self.logit(context, response)
            .map(|z| sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
    }

    fn check_dims(&self, context: &[f64], response: &[f64]) -> Result<()> {
        for v in [context, response] {
            if v.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: v.len(),
                });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>, train_config: Option<&TrainConfig>) -> Result<()> {
        let path = path.as_ref();
        let mut body = serde_json::to_string(&self.to_document(train_config))?;
        body.push('\n');
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: ModelDocument = serde_json::from_str(&body)?;
        Self::from_document(doc)
    }

    pub fn to_document(&self, train_config: Option<&TrainConfig>) -> ModelDocument {
        let dim = self.dim;
        ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            dim,
            m: self.bilinear.chunks(dim).map(<[f64]>::to_vec).collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerDocument {
                    w: l.weights.chunks(l.inputs).map(<[f64]>::to_vec).collect(),
                    b: l.bias.clone(),
                })
                .collect(),
            config: ModelConfigDocument {
                hidden: self.hidden_sizes(),
                dropout: self.dropout,
                hidden_activation: "relu".into(),
                output_activation: "sigmoid".into(),
                feature_layout: "context;bilinear;response".into(),
                training: train_config.cloned(),
            },
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format_version {}",
                doc.format_version
            )));
        }
        let dim = doc.dim;
        if dim == 0 || doc.m.len() != dim || doc.m.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("bilinear matrix shape does not match dim"));
        }
        if doc.layers.is_empty() {
            return Err(Error::invalid("model has no layers"));
        }
        let mut layers = Vec::with_capacity(doc.layers.len());
        let mut inputs = 2 * dim + 1;
        for (i, l) in doc.layers.into_iter().enumerate() {
            let outputs = l.w.len();
            if outputs == 0 || l.b.len() != outputs || l.w.iter().any(|r| r.len() != inputs) {
                return Err(Error::invalid(format!("layer {i} has inconsistent shape")));
            }
            layers.push(Dense {
                inputs,
                outputs,
                weights: l.w.into_iter().flatten().collect(),
                bias: l.b,
            });
            inputs = outputs;
        }
        if inputs != 1 {
            return Err(Error::invalid("output layer must have exactly one unit"));
        }
        let model = ScorerModel {
            dim,
            bilinear: doc.m.into_iter().flatten().collect(),
            layers,
            dropout: doc.config.dropout,
        };
        if !model.is_finite() {
            return Err(Error::Numerical(
                "model file contains non-finite parameters".into(),
            ));
        }
        Ok(model)
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDocument {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfigDocument {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub hidden_activation: String,
    pub output_activation: String,
    pub feature_layout: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainConfig>,
}

/// On-disk model layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub dim: usize,
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    pub layers: Vec<LayerDocument>,
    pub config: ModelConfigDocument,
    pub format_version: u32,
}

pub(crate) fn bilinear_term(m: &[f64], dim: usize, context: &[f64], response: &[f64]) -> f64 {
    context
        .iter()
        .enumerate()
        .map(|(a, q)| q * fast_dot(&m[a * dim..(a + 1) * dim], response))
        .sum()
}

fn features_unchecked(context: &[f64], response: &[f64], m: &[f64]) -> Vec<f64> {
    let dim = context.len();
    let mut x = Vec::with_capacity(2 * dim + 1);
    x.extend_from_slice(context);
    x.push(bilinear_term(m, dim, context, response));
    x.extend_from_slice(response);
    x
}

/// `[v_q ; v_q^T M v_r ; v_r]`.
pub fn build_features(context: &[f64], response: &[f64], m: &[f64]) -> Result<Vec<f64>> {
    let dim = context.len();
    if response.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: response.len(),
        });
    }
    if m.len() != dim * dim {
        return Err(Error::DimensionMismatch {
            expected: dim * dim,
            actual: m.len(),
        });
    }
    Ok(features_unchecked(context, response, m))
}

/// Weighted mean binary cross-entropy; accepts soft labels.
pub fn bce_loss(predictions: &[f64], labels: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    if predictions.len() != labels.len() || weights.is_some_and(|w| w.len() != labels.len()) {
        return Err(Error::invalid(
            "predictions, labels and weights must have equal lengths",
        ));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0;
    let mut wsum = 0.0;
    for (i, (&p, &y)) in predictions.iter().zip(labels).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        total += w * bce_term(p, y);
        wsum += w;
    }
    Ok(total / wsum)
}

pub(crate) fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(PRED_EPS, 1.0 - PRED_EPS);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use std::f64::consts::LN_2;

    #[test]
    fn features_examples() {
        let eye = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(
            build_features(&[1.0, 0.0], &[0.0, 1.0], &eye).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0, 1.0]
        );
        assert_eq!(
            build_features(&[1.0, 1.0], &[1.0, 1.0], &eye).unwrap()[2],
            2.0
        );
        assert_eq!(
            build_features(&[0.5, 2.0], &[3.0, -1.0], &[0.0; 4]).unwrap(),
            vec![0.5, 2.0, 0.0, 3.0, -1.0]
        );
        assert!(build_features(&[1.0], &[1.0, 2.0], &eye).is_err());
    }

    #[test]
    fn zero_model_scores_half() {
        let model = ScorerModel::zeros(3, &[4, 5], 0.5);
        assert_eq!(
            model.score(&[1.0, 2.0, 3.0], &[-1.0, 0.0, 4.0]).unwrap(),
            0.5
        );
    }

    #[test]
    fn scores_in_open_interval() {
        let mut r = rng::from_seed(3);
        let model = ScorerModel::init(4, &[8, 8], 0.5, &mut r).unwrap();
        for scale in [0.0, 1.0, 100.0, 1e6] {
            let s = model.score(&[scale; 4], &[-scale; 4]).unwrap();
            assert!(s > 0.0 && s < 1.0, "{s}");
        }
        let s = model
            .score(&[0.3, -0.2, 0.1, 0.9], &[0.5, 0.5, -0.5, 0.1])
            .unwrap();
        assert!(s > 0.0 && s < 1.0);
        assert!(model.score(&[1.0; 3], &[1.0; 4]).is_err());
    }

    #[test]
    fn hand_set_model_matches_oracle() {
        // dim 2, one hidden layer of 2 units
        let model = ScorerModel {
            dim: 2,
            bilinear: vec![0.5, -0.25, 0.125, 1.0],
            layers: vec![
                Dense {
                    inputs: 5,
                    outputs: 2,
                    weights: vec![0.1, -0.2, 0.3, 0.4, -0.5, -0.6, 0.7, 0.8, -0.9, 1.0],
                    bias: vec![0.05, -0.1],
                },
                Dense {
                    inputs: 2,
                    outputs: 1,
                    weights: vec![1.5, -2.0],
                    bias: vec![0.25],
                },
            ],
            dropout: 0.5,
        };
        let q = [0.6, -0.4];
        let r = [0.2, 0.9];
        // hand evaluation
        let s = 0.6 * (0.5 * 0.2 + -0.25 * 0.9) + -0.4 * (0.125 * 0.2 + 1.0 * 0.9);
        let x: [f64; 5] = [0.6, -0.4, s, 0.2, 0.9];
        let h0 = (0.05 + 0.1 * x[0] - 0.2 * x[1] + 0.3 * x[2] + 0.4 * x[3] - 0.5 * x[4]).max(0.0);
        let h1 = (-0.1 - 0.6 * x[0] + 0.7 * x[1] + 0.8 * x[2] - 0.9 * x[3] + 1.0 * x[4]).max(0.0);
        let z: f64 = 0.25 + 1.5 * h0 - 2.0 * h1;
        let expected = 1.0 / (1.0 + (-z).exp());
        assert!((model.score(&q, &r).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn bce_examples() {
        assert!(bce_loss(&[1.0 - 1e-15], &[1.0], None).unwrap() < 1e-11);
        assert!((bce_loss(&[0.5], &[1.0], None).unwrap() - LN_2).abs() < 1e-15);
        assert!((bce_loss(&[0.5], &[0.5], None).unwrap() - LN_2).abs() < 1e-15);
        assert!(bce_loss(&[0.5, 0.5], &[1.0], None).is_err());
        let weighted = bce_loss(&[0.5, 0.9], &[1.0, 1.0], Some(&[3.0, 0.0])).unwrap();
        assert!((weighted - LN_2).abs() < 1e-15);
    }

    #[test]
    fn bilinear_scale_is_quadratic() {
        let mut r = rng::from_seed(1);
        let model = ScorerModel::init(3, &[4], 0.5, &mut r).unwrap();
        let q = [0.2, -0.7, 0.4];
        let v = [0.9, 0.1, -0.3];
        let base = model.bilinear_term(&q, &v);
        let q2: Vec<f64> = q.iter().map(|x| x * 3.0).collect();
        let v2: Vec<f64> = v.iter().map(|x| x * 3.0).collect();
        assert!((model.bilinear_term(&q2, &v2) - 9.0 * base).abs() < 1e-12);
    }

    #[test]
    fn document_roundtrip_and_corruption() {
        let mut r = rng::from_seed(2);
        let model = ScorerModel::init(3, &[4, 2], 0.5, &mut r).unwrap();
        let doc = model.to_document(Some(&TrainConfig::default()));
        let text = serde_json::to_string(&doc).unwrap();
        let back = ScorerModel::from_document(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, model);

        let mut bad = doc.clone();
        bad.layers[0].w[1].pop();
        assert!(ScorerModel::from_document(bad).is_err());
        let mut bad = doc;
        bad.format_version = 2;
        assert!(ScorerModel::from_document(bad).is_err());
    }

    #[test]
    fn fast_dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((fast_dot(&a, &b) - naive).abs() < 1e-12);
    }
}
