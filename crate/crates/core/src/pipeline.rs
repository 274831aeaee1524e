//! End-to-end PONE training from text pairs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::augmentor::{augment_pair, AugmentedSet, SynonymLexicon};
use crate::config::PoneConfig;
use crate::corpus::DialoguePair;
use crate::embeddings::{Encoder, PrecomputedEmbeddingStore, SentenceVector};
use crate::error::{Error, Result};
use crate::label_filter::{
    build_fine_tune_set, filter_iterate, IterationRecord, PseudoLabelState, VectorPair,
};
use crate::negative_sampler::{NegativeSample, NegativeSampler, NegativeStrategy};
use crate::scorer::{train, ScorerModel};
use crate::text::tokenize;

/// Which components a training run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Weighted negatives, augmentation and the label filter.
    Full,
    /// Weighted negatives only.
    PoLf,
    /// Augmentation with random negatives, no filter.
    NeLf,
    /// Augmentation and filter with random negatives.
    Ne,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Full, Mode::PoLf, Mode::NeLf, Mode::Ne];

    pub fn weighted_negatives(self) -> bool {
        matches!(self, Mode::Full | Mode::PoLf)
    }

    pub fn augmentation(self) -> bool {
        !matches!(self, Mode::PoLf)
    }

    pub fn label_filter(self) -> bool {
        matches!(self, Mode::Full | Mode::Ne)
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "po-lf" => Ok(Mode::PoLf),
            "ne-lf" => Ok(Mode::NeLf),
            "ne" => Ok(Mode::Ne),
            other => Err(Error::Config(format!(
                "unknown mode `{other}` (expected full, po-lf, ne-lf or ne)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::PoLf => "po-lf",
            Mode::NeLf => "ne-lf",
            Mode::Ne => "ne",
        })
    }
}

/// Where augmented positives come from.
#[derive(Debug, Clone, Copy)]
pub enum AugmentSource<'a> {
    Eda(&'a SynonymLexicon),
    /// Pre-generated candidates keyed by pair id; pairs without an entry
    /// get no augmentation.
    External(&'a BTreeMap<String, AugmentedSet>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub model: ScorerModel,
    pub mode: Mode,
    pub negatives: Vec<NegativeSample>,
    pub augmented: Vec<AugmentedSet>,
    /// Final pseudo labels, when the filter ran.
    pub pseudo_labels: Option<PseudoLabelState>,
    pub filter_trace: Vec<IterationRecord>,
}

/// Context and response vectors for every pair, keyed `(pair_id, role)`.
pub fn encode_pairs(
    pairs: &[DialoguePair],
    encoder: &Encoder,
) -> Result<Vec<(SentenceVector, SentenceVector)>> {
    pairs
        .iter()
        .map(|p| {
            let q = encoder.encode(
                &PrecomputedEmbeddingStore::key(&p.id, "context"),
                &p.context_tokens(),
            )?;
            let r = encoder.encode(
                &PrecomputedEmbeddingStore::key(&p.id, "response"),
                &p.response_tokens(),
            )?;
            Ok((q, r))
        })
        .collect()
}

pub fn fit(
    pairs: &[DialoguePair],
    encoder: &Encoder,
    augment: AugmentSource<'_>,
    mode: Mode,
    config: &PoneConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    let encoded = encode_pairs(pairs, encoder)?;
    let positives: Vec<VectorPair> = pairs
        .iter()
        .zip(&encoded)
        .map(|(p, (q, r))| VectorPair::new(p.id.clone(), q.vector.clone(), r.vector.clone()))
        .collect();

    let strategy = if mode.weighted_negatives() {
        NegativeStrategy::Weighted
    } else {
        NegativeStrategy::Uniform
    };
    let sampler = NegativeSampler::new(pairs, encoder)?;
    let index: HashMap<&str, usize> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), i))
        .collect();
    let mut negatives = Vec::new();
    let mut negative_vectors = Vec::new();
    for (i, pos) in positives.iter().enumerate() {
        for (n, s) in sampler
            .sample(i, &config.sampler, strategy, 0)?
            .into_iter()
            .enumerate()
        {
            let src = index[s.source_id.as_str()];
            negative_vectors.push(VectorPair::new(
                format!("{}#neg{n}", pos.id),
                pos.context.clone(),
                sampler.response_vector(src).vector.clone(),
            ));
            negatives.push(s);
        }
    }

    let mut augmented = Vec::new();
    let mut augmented_vectors = Vec::new();
    if mode.augmentation() {
        for (pair, pos) in pairs.iter().zip(&positives) {
            let set = match augment {
                AugmentSource::Eda(lexicon) => augment_pair(pair, &config.eda, lexicon)?,
                AugmentSource::External(sets) => match sets.get(&pair.id) {
                    Some(s) => s.clone(),
                    None => continue,
                },
            };
            for (j, variant) in set.variants.iter().enumerate() {
                let id = set.variant_id(j);
                let v = encoder.encode(
                    &PrecomputedEmbeddingStore::key(&id, "response"),
                    &tokenize(variant),
                )?;
                augmented_vectors.push(VectorPair::new(id, pos.context.clone(), v.vector));
            }
            augmented.push(set);
        }
        if augmented.is_empty() {
            log::warn!("no pair received augmented positives");
        }
    }

    let (model, pseudo_labels, filter_trace) = if mode.label_filter() {
        let out = filter_iterate(
            &positives,
            &negative_vectors,
            &augmented_vectors,
            &config.filter,
            &config.train,
        )?;
        (out.model, Some(out.state), out.trace)
    } else {
        let all_positive = PseudoLabelState::initial(&augmented_vectors);
        let set = build_fine_tune_set(
            &positives,
            &negative_vectors,
            &augmented_vectors,
            &all_positive,
            false,
        );
        (train(&set, &config.train)?.model, None, Vec::new())
    };

    Ok(FitOutcome {
        model,
        mode,
        negatives,
        augmented,
        pseudo_labels,
        filter_trace,
    })
}

/// Scores every pair with `model`.
pub fn score_pairs(
    model: &ScorerModel,
    pairs: &[DialoguePair],
    encoder: &Encoder,
) -> Result<Vec<f64>> {
    encode_pairs(pairs, encoder)?
        .iter()
        .map(|(q, r)| model.score(&q.vector, &r.vector))
        .collect()
}
