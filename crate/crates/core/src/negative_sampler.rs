//! Similarity-weighted negative sampling.
//!
//! For each ground-truth pair a pool of `h` candidate responses is drawn
//! uniformly from the rest of the corpus. Each candidate is weighted by a
//! temperature softmax over its cosine similarity to the ground-truth
//! response, and negatives are drawn from that distribution. Small
//! temperatures concentrate the mass on the nearest candidate; large ones
//! approach uniform sampling.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::DialoguePair;
use crate::embeddings::{cosine, Encoder, PrecomputedEmbeddingStore, SentenceVector};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Candidate pool size `h`.
    pub pool_size: usize,
    /// Softmax temperature `t`.
    pub temperature: f64,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            pool_size: 128,
            temperature: 0.07,
            negatives_per_positive: 1,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config(
                "negatives_per_positive must be at least 1".into(),
            ));
        }
        if self.pool_size < self.negatives_per_positive {
            return Err(Error::Config(format!(
                "pool size {} smaller than negatives_per_positive {}",
                self.pool_size, self.negatives_per_positive
            )));
        }
        Ok(())
    }
}

/// How negatives are chosen from the candidate pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeStrategy {
    /// Temperature softmax over cosine similarity.
    Weighted,
    /// Uniform over the pool (plain random negative sampling).
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeSample {
    pub pair_id: String,
    /// Id of the pair whose response was borrowed.
    pub source_id: String,
    pub negative_response: String,
    pub similarity_to_truth: f64,
    pub sample_probability: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub repeat: u64,
}

fn is_zero(x: &u64) -> bool {
    *x == 0
}

/// Draws `h` distinct indices of `dataset` uniformly, never picking the
/// excluded pair nor any pair whose response string equals the excluded
/// pair's response.
pub fn draw_candidate_pool(
    dataset: &[DialoguePair],
    exclude_id: &str,
    h: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if dataset.len() <= h {
        return Err(Error::invalid(format!(
            "dataset of {} pairs cannot supply a pool of {h} after excluding `{exclude_id}`",
            dataset.len()
        )));
    }
    let truth = dataset
        .iter()
        .find(|p| p.id == exclude_id)
        .map(|p| p.response.as_str());
    let eligible: Vec<usize> = dataset
        .iter()
        .enumerate()
        .filter(|(_, p)| p.id != exclude_id && Some(p.response.as_str()) != truth)
        .map(|(i, _)| i)
        .collect();
    if eligible.len() < h {
        return Err(Error::invalid(format!(
            "only {} eligible candidates for `{exclude_id}`, pool needs {h}",
            eligible.len()
        )));
    }
    Ok(rand::seq::index::sample(rng, eligible.len(), h)
        .into_iter()
        .map(|i| eligible[i])
        .collect())
}

/// `exp(s_i / t) / sum_j exp(s_j / t)`, evaluated after subtracting the
/// maximum score.
pub fn softmax_with_temperature(scores: &[f64], t: f64) -> Result<Vec<f64>> {
    if t.is_nan() || t <= 0.0 {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {t}"
        )));
    }
    if scores.is_empty() {
        return Err(Error::invalid("softmax over an empty candidate list"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / t).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Selection probability of each candidate given the ground-truth vector.
pub fn selection_probabilities(
    truth: &SentenceVector,
    candidates: &[&SentenceVector],
    t: f64,
) -> Result<Vec<f64>> {
    let sims: Vec<f64> = candidates
        .iter()
        .map(|c| cosine(&truth.vector, &c.vector))
        .collect();
    softmax_with_temperature(&sims, t)
}

/// Draws `count` distinct indices from a categorical distribution.
pub fn draw_without_replacement(probs: &[f64], count: usize, rng: &mut Rng) -> Vec<usize> {
    let mut taken = vec![false; probs.len()];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count.min(probs.len()) {
        let mass: f64 = probs
            .iter()
            .zip(&taken)
            .filter(|(_, t)| !**t)
            .map(|(p, _)| p)
            .sum();
        let mut u = rng.gen::<f64>() * mass;
        let mut pick = None;
        for (i, p) in probs.iter().enumerate() {
            if taken[i] {
                continue;
            }
            pick = Some(i);
            if u < *p {
                break;
            }
            u -= p;
        }
        // falls through to the last untaken index on rounding
        let i = pick.expect("count bounded by probs.len()");
        taken[i] = true;
        out.push(i);
    }
    out
}

/// Samples negatives for every pair of a dataset, with response vectors
/// encoded once up front.
pub struct NegativeSampler<'a> {
    dataset: &'a [DialoguePair],
    responses: Vec<SentenceVector>,
}

impl<'a> NegativeSampler<'a> {
    pub fn new(dataset: &'a [DialoguePair], encoder: &Encoder) -> Result<Self> {
        let responses = dataset
            .iter()
            .map(|p| {
                encoder.encode(
                    &PrecomputedEmbeddingStore::key(&p.id, "response"),
                    &p.response_tokens(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NegativeSampler { dataset, responses })
    }

    pub fn response_vector(&self, index: usize) -> &SentenceVector {
        &self.responses[index]
    }

    /// Negatives for `dataset[index]`, drawn on the stream
    /// `(config.seed, pair_id, repeat)`.
    pub fn sample(
        &self,
        index: usize,
        config: &SamplerConfig,
        strategy: NegativeStrategy,
        repeat: u64,
    ) -> Result<Vec<NegativeSample>> {
        config.validate()?;
        let pair = &self.dataset[index];
        let mut rng = rng::derive_indexed(config.seed, &pair.id, repeat);
        let pool = draw_candidate_pool(self.dataset, &pair.id, config.pool_size, &mut rng)?;
        let truth = &self.responses[index];
        let sims: Vec<f64> = pool
            .iter()
            .map(|&j| cosine(&truth.vector, &self.responses[j].vector))
            .collect();
        let probs = match strategy {
            NegativeStrategy::Weighted => softmax_with_temperature(&sims, config.temperature)?,
            NegativeStrategy::Uniform => vec![1.0 / pool.len() as f64; pool.len()],
        };
        let picks = draw_without_replacement(&probs, config.negatives_per_positive, &mut rng);
        Ok(picks
            .into_iter()
            .map(|k| {
                let src = &self.dataset[pool[k]];
                NegativeSample {
                    pair_id: pair.id.clone(),
                    source_id: src.id.clone(),
                    negative_response: src.response.clone(),
                    similarity_to_truth: sims[k],
                    sample_probability: probs[k],
                    repeat,
                }
            })
            .collect())
    }
}

/// Weighted negatives for a single pair.
pub fn sample_negatives(
    pair: &DialoguePair,
    dataset: &[DialoguePair],
    config: &SamplerConfig,
    encoder: &Encoder,
) -> Result<Vec<NegativeSample>> {
    let index = dataset
        .iter()
        .position(|p| p.id == pair.id)
        .ok_or_else(|| Error::invalid(format!("pair `{}` not in dataset", pair.id)))?;
    NegativeSampler::new(dataset, encoder)?.sample(index, config, NegativeStrategy::Weighted, 0)
}
