//! Sentence-level word-overlap metrics against a single reference.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augmentor::SynonymLexicon;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMetric {
    Bleu1,
    Bleu2,
    Bleu3,
    Bleu4,
    RougeL,
    Meteor,
}

impl fmt::Display for OverlapMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverlapMetric::Bleu1 => "bleu1",
            OverlapMetric::Bleu2 => "bleu2",
            OverlapMetric::Bleu3 => "bleu3",
            OverlapMetric::Bleu4 => "bleu4",
            OverlapMetric::RougeL => "rouge_l",
            OverlapMetric::Meteor => "meteor",
        })
    }
}

impl FromStr for OverlapMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "bleu1" => OverlapMetric::Bleu1,
            "bleu2" => OverlapMetric::Bleu2,
            "bleu3" => OverlapMetric::Bleu3,
            "bleu4" => OverlapMetric::Bleu4,
            "rouge" | "rouge_l" | "rouge-l" => OverlapMetric::RougeL,
            "meteor" => OverlapMetric::Meteor,
            other => return Err(Error::invalid(format!("unknown overlap metric `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapScore {
    pub metric: OverlapMetric,
    pub value: f64,
}

/// How zero n-gram precisions are handled for orders `n >= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Smoothing {
    None,
    /// A zero match count is replaced by `epsilon` before dividing.
    Epsilon(f64),
    /// `Epsilon(1e-9)`.
    #[default]
    DefaultEpsilon,
}

impl Smoothing {
    fn epsilon(self) -> Option<f64> {
        match self {
            Smoothing::None => None,
            Smoothing::Epsilon(e) => Some(e),
            Smoothing::DefaultEpsilon => Some(1e-9),
        }
    }
}

fn ensure_non_empty<T>(candidate: &[T], reference: &[T]) -> Result<()> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::invalid("candidate and reference must be non-empty"));
    }
    Ok(())
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts
                .entry(w.iter().map(AsRef::as_ref).collect())
                .or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with uniform weights over orders `1..=max_n`.
///
/// Orders for which the candidate has no n-grams at all (candidate shorter
/// than `n`) are left out of the geometric mean, so a sentence always scores
/// 1.0 against itself.
pub fn bleu<T: AsRef<str>>(
    candidate: &[T],
    reference: &[T],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64> {
    ensure_non_empty(candidate, reference)?;
    if !(1..=4).contains(&max_n) {
        return Err(Error::invalid(format!("max_n must be 1-4, got {max_n}")));
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=max_n.min(candidate.len()) {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let total = candidate.len() + 1 - n;
        let clipped: usize = cand
            .iter()
            .map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let precision = if clipped > 0 {
            clipped as f64 / total as f64
        } else {
            match smoothing.epsilon() {
                Some(eps) if n >= 2 => eps / total as f64,
                _ => return Ok(0.0),
            }
        };
        log_sum += precision.ln();
        orders += 1;
    }
    let bp = brevity_penalty(candidate.len(), reference.len());
    Ok((bp * (log_sum / orders as f64).exp()).clamp(0.0, 1.0))
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    (1.0 - ref_len as f64 / cand_len as f64).min(0.0).exp()
}

pub fn lcs_length<T: AsRef<str>>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure (beta = 1).
pub fn rouge_l<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> Result<f64> {
    ensure_non_empty(candidate, reference)?;
    let lcs = lcs_length(candidate, reference);
    if lcs == 0 {
        return Ok(0.0);
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

/// Unigram METEOR: exact matches first, then synonym matches when a lexicon
/// is supplied. `F = 10PR / (R + 9P)` times `1 - 0.5 (chunks / matches)^3`.
pub fn meteor<T: AsRef<str>>(
    candidate: &[T],
    reference: &[T],
    synonyms: Option<&SynonymLexicon>,
) -> Result<f64> {
    ensure_non_empty(candidate, reference)?;
    let alignment = align(candidate, reference, synonyms);
    let matches = alignment.iter().filter(|a| a.is_some()).count();
    if matches == 0 {
        return Ok(0.0);
    }
    let p = matches as f64 / candidate.len() as f64;
    let r = matches as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let chunks = count_chunks(&alignment);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    Ok(f_mean * (1.0 - penalty))
}

/// For each candidate position, the matched reference position.
///
/// Each stage walks the candidate left to right and prefers the reference
/// position that continues the previous match, which keeps chunk counts low
/// without a full alignment search.
type Matcher<'a> = dyn Fn(&str, &str) -> bool + 'a;

fn align<T: AsRef<str>>(
    candidate: &[T],
    reference: &[T],
    synonyms: Option<&SynonymLexicon>,
) -> Vec<Option<usize>> {
    let mut alignment: Vec<Option<usize>> = vec![None; candidate.len()];
    let mut used = vec![false; reference.len()];
    let exact = |c: &str, r: &str| c == r;
    let synonym = |c: &str, r: &str| synonyms.is_some_and(|lex| lex.are_synonyms(c, r));
    let stages: [&Matcher; 2] = [&exact, &synonym];
    for (stage, matcher) in stages.iter().enumerate() {
        if stage == 1 && synonyms.is_none() {
            break;
        }
        for i in 0..candidate.len() {
            if alignment[i].is_some() {
                continue;
            }
            let c = candidate[i].as_ref();
            let preferred = i
                .checked_sub(1)
                .and_then(|p| alignment[p])
                .map(|j| j + 1)
                .filter(|&j| j < reference.len() && !used[j] && matcher(c, reference[j].as_ref()));
            let chosen = preferred.or_else(|| {
                (0..reference.len()).find(|&j| !used[j] && matcher(c, reference[j].as_ref()))
            });
            if let Some(j) = chosen {
                alignment[i] = Some(j);
                used[j] = true;
            }
        }
    }
    alignment
}

/// A chunk is a maximal run of candidate-adjacent matches whose reference
/// positions are also adjacent and increasing.
fn count_chunks(alignment: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for a in alignment {
        match (prev, a) {
            (Some(p), Some(j)) if *j == p + 1 => {}
            (_, Some(_)) => chunks += 1,
            _ => {}
        }
        prev = *a;
    }
    chunks
}

/// Scores one metric on tokenized inputs.
pub fn score<T: AsRef<str>>(
    metric: OverlapMetric,
    candidate: &[T],
    reference: &[T],
    smoothing: Smoothing,
    synonyms: Option<&SynonymLexicon>,
) -> Result<OverlapScore> {
    let value = match metric {
        OverlapMetric::Bleu1 => bleu(candidate, reference, 1, smoothing)?,
        OverlapMetric::Bleu2 => bleu(candidate, reference, 2, smoothing)?,
        OverlapMetric::Bleu3 => bleu(candidate, reference, 3, smoothing)?,
        OverlapMetric::Bleu4 => bleu(candidate, reference, 4, smoothing)?,
        OverlapMetric::RougeL => rouge_l(candidate, reference)?,
        OverlapMetric::Meteor => meteor(candidate, reference, synonyms)?,
    };
    Ok(OverlapScore { metric, value })
}
