//! Iterative pseudo-labelling of augmented positives.
//!
//! The scorer is pretrained on ground-truth positives and negatives, then
//! alternates between labelling every augmented sample (score at or above
//! the threshold means positive) and fine-tuning on the union of the
//! original data and the pseudo-labelled samples, until the labels stop
//! changing or the round cap is hit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scorer::{train, train_from, ScorerModel, TrainConfig, TrainingExample};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub max_iterations: usize,
    pub label_threshold: f64,
    pub fine_tune_epochs: usize,
    pub stop_on_fixpoint: bool,
    /// Leave samples labelled 0 out of fine-tuning instead of using them
    /// as negatives.
    pub drop_flipped: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_iterations: 10,
            label_threshold: 0.5,
            fine_tune_epochs: 20,
            stop_on_fixpoint: true,
            drop_flipped: false,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(self.label_threshold > 0.0 && self.label_threshold < 1.0) {
            return Err(Error::Config(format!(
                "label_threshold {} outside (0, 1)",
                self.label_threshold
            )));
        }
        if self.fine_tune_epochs == 0 {
            return Err(Error::Config("fine_tune_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// An encoded (context, response) pair with a stable id.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorPair {
    pub id: String,
    pub context: Vec<f64>,
    pub response: Vec<f64>,
}

impl VectorPair {
    pub fn new(id: impl Into<String>, context: Vec<f64>, response: Vec<f64>) -> Self {
        VectorPair {
            id: id.into(),
            context,
            response,
        }
    }

    fn example(&self, label: f64) -> TrainingExample {
        TrainingExample::new(self.context.clone(), self.response.clone(), label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PseudoLabelState {
    pub iteration: usize,
    pub labels: BTreeMap<String, u8>,
    pub flips_last_round: usize,
}

impl PseudoLabelState {
    /// Starting state: every augmented sample presumed positive.
    pub fn initial(augmented: &[VectorPair]) -> Self {
        PseudoLabelState {
            iteration: 0,
            labels: augmented.iter().map(|a| (a.id.clone(), 1)).collect(),
            flips_last_round: 0,
        }
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.values().filter(|&&l| l == 1).count() as f64 / self.labels.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub flips: usize,
    pub positive_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub model: ScorerModel,
    pub state: PseudoLabelState,
    pub trace: Vec<IterationRecord>,
}

fn base_examples(positives: &[VectorPair], negatives: &[VectorPair]) -> Vec<TrainingExample> {
    positives
        .iter()
        .map(|p| p.example(1.0))
        .chain(negatives.iter().map(|n| n.example(0.0)))
        .collect()
}

/// Trains a fresh scorer on un-augmented data only.
pub fn pretrain(
    positives: &[VectorPair],
    negatives: &[VectorPair],
    config: &TrainConfig,
) -> Result<ScorerModel> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::invalid(
            "pretraining needs both positives and negatives",
        ));
    }
    Ok(train(&base_examples(positives, negatives), config)?.model)
}

/// Labels every augmented sample with `score >= threshold` and counts the
/// labels that differ from `previous`.
pub fn assign_pseudo_labels(
    model: &ScorerModel,
    augmented: &[VectorPair],
    threshold: f64,
    previous: &PseudoLabelState,
) -> Result<PseudoLabelState> {
    let mut labels = BTreeMap::new();
    let mut flips = 0;
    for a in augmented {
        let label = u8::from(model.score(&a.context, &a.response)? >= threshold);
        if previous.labels.get(&a.id) != Some(&label) {
            flips += 1;
        }
        labels.insert(a.id.clone(), label);
    }
    Ok(PseudoLabelState {
        iteration: previous.iteration + 1,
        labels,
        flips_last_round: flips,
    })
}

/// Ground-truth positives, negatives, and augmented samples carrying their
/// pseudo labels (label-0 samples as negatives unless `drop_flipped`).
pub fn build_fine_tune_set(
    positives: &[VectorPair],
    negatives: &[VectorPair],
    augmented: &[VectorPair],
    state: &PseudoLabelState,
    drop_flipped: bool,
) -> Vec<TrainingExample> {
    let mut set = base_examples(positives, negatives);
    for a in augmented {
        let label = state.labels.get(&a.id).copied().unwrap_or(1);
        if label == 0 && drop_flipped {
            continue;
        }
        set.push(a.example(f64::from(label)));
    }
    set
}

pub fn filter_iterate(
    positives: &[VectorPair],
    negatives: &[VectorPair],
    augmented: &[VectorPair],
    filter: &FilterConfig,
    config: &TrainConfig,
) -> Result<FilterOutcome> {
    filter.validate()?;
    let mut model = pretrain(positives, negatives, config)?;
    let mut state = PseudoLabelState::initial(augmented);
    let mut trace = Vec::new();
    if augmented.is_empty() {
        return Ok(FilterOutcome {
            model,
            state,
            trace,
        });
    }
    let fine_tune = TrainConfig {
        epochs: filter.fine_tune_epochs,
        ..config.clone()
    };
    for round in 1..=filter.max_iterations {
        let next = assign_pseudo_labels(&model, augmented, filter.label_threshold, &state)?;
        trace.push(IterationRecord {
            iteration: next.iteration,
            flips: next.flips_last_round,
            positive_fraction: next.positive_fraction(),
        });
        let settled = round > 1 && next.flips_last_round == 0;
        state = next;
        if settled && filter.stop_on_fixpoint {
            break;
        }
        let set = build_fine_tune_set(positives, negatives, augmented, &state, filter.drop_flipped);
        model = train_from(model, &set, &fine_tune, round as u64)?.model;
    }
    Ok(FilterOutcome {
        model,
        state,
        trace,
    })
}

pub fn write_trace_jsonl(path: impl AsRef<Path>, trace: &[IterationRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in trace {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
