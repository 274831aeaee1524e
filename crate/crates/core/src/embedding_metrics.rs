//! Embedding-based reference metrics.
//!
//! All four metrics compare a candidate against a reference through token
//! vectors. Embedding Average, Vector Extrema and Greedy Matching take
//! vectors from an [`EmbeddingTable`]; the BERTScore-style F1 takes token
//! matrices directly so contextual embeddings can be plugged in.

use std::fmt;
use std::str::FromStr;

use crate::embeddings::{average_pool, cosine, dot, norm, EmbeddingTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmbeddingMetric {
    EmbeddingAverage,
    VectorExtrema,
    GreedyMatching,
    BertScore,
}

impl fmt::Display for EmbeddingMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingMetric::EmbeddingAverage => "ea",
            EmbeddingMetric::VectorExtrema => "vx",
            EmbeddingMetric::GreedyMatching => "gm",
            EmbeddingMetric::BertScore => "bertscore",
        })
    }
}

impl FromStr for EmbeddingMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ea" | "embedding_average" => EmbeddingMetric::EmbeddingAverage,
            "vx" | "vector_extrema" => EmbeddingMetric::VectorExtrema,
            "gm" | "greedy_matching" => EmbeddingMetric::GreedyMatching,
            "bertscore" => EmbeddingMetric::BertScore,
            other => {
                return Err(Error::invalid(format!(
                    "unknown embedding metric `{other}`"
                )))
            }
        })
    }
}

fn ensure_non_empty<T>(candidate: &[T], reference: &[T]) -> Result<()> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::invalid("candidate and reference must be non-empty"));
    }
    Ok(())
}

pub fn embedding_average<S: AsRef<str>>(
    candidate: &[S],
    reference: &[S],
    table: &EmbeddingTable,
) -> Result<f64> {
    ensure_non_empty(candidate, reference)?;
    let c = average_pool(candidate, table)?;
    let r = average_pool(reference, table)?;
    Ok(cosine(&c.vector, &r.vector))
}

/// Per dimension, the component with the largest magnitude (sign kept).
/// On a magnitude tie the earlier token wins.
pub fn extrema_vector(rows: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; dim];
    for row in rows {
        for (o, x) in out.iter_mut().zip(row.iter()) {
            if x.abs() > o.abs() {
                *o = *x;
            }
        }
    }
    out
}

pub fn vector_extrema<S: AsRef<str>>(
    candidate: &[S],
    reference: &[S],
    table: &EmbeddingTable,
) -> Result<f64> {
    ensure_non_empty(candidate, reference)?;
    let rows = |toks: &[S]| -> Vec<f64> {
        let vecs: Vec<&[f64]> = toks.iter().map(|t| table.lookup(t.as_ref())).collect();
        extrema_vector(&vecs, table.dim())
    };
    Ok(cosine(&rows(candidate), &rows(reference)))
}

/// Mean over rows of `from` of the best cosine against any row of `to`.
fn directed_greedy(from: &[&[f64]], to: &[&[f64]]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|a| {
            to.iter()
                .map(|b| cosine(a, b))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    total / from.len() as f64
}

pub fn greedy_matching<S: AsRef<str>>(
    candidate: &[S],
    reference: &[S],
    table: &EmbeddingTable,
) -> Result<f64> {
    ensure_non_empty(candidate, reference)?;
    let c: Vec<&[f64]> = candidate.iter().map(|t| table.lookup(t.as_ref())).collect();
    let r: Vec<&[f64]> = reference.iter().map(|t| table.lookup(t.as_ref())).collect();
    Ok((directed_greedy(&c, &r) + directed_greedy(&r, &c)) / 2.0)
}

fn l2_normalize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let n = norm(r);
            if n == 0.0 {
                r.clone()
            } else {
                r.iter().map(|x| x / n).collect()
            }
        })
        .collect()
}

/// Greedy-matching F1 over token matrices (no IDF weighting, no baseline
/// rescaling). Rows are L2-normalized first; zero rows match nothing.
pub fn bertscore_f1(candidate: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    ensure_non_empty(candidate, reference)?;
    let dim = candidate[0].len();
    for row in candidate.iter().chain(reference) {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: row.len(),
            });
        }
    }
    let c = l2_normalize(candidate);
    let r = l2_normalize(reference);
    let best = |from: &[Vec<f64>], to: &[Vec<f64>]| -> f64 {
        from.iter()
            .map(|a| {
                to.iter()
                    .map(|b| dot(a, b))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    let precision = best(&c, &r);
    let recall = best(&r, &c);
    if precision + recall <= 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2);
        t.insert("x", vec![1.0, 0.0]).unwrap();
        t.insert("y", vec![0.0, 1.0]).unwrap();
        t.insert("z", vec![0.0, 3.0]).unwrap();
        t.insert("w", vec![2.0, 0.0]).unwrap();
        t.insert("n", vec![-2.0, 0.0]).unwrap();
        t.insert("p", vec![0.3, 0.7]).unwrap();
        t
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn embedding_average_examples() {
        let t = table();
        let same = s(&["x", "p", "y"]);
        assert!((embedding_average(&same, &same, &t).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(embedding_average(&s(&["x"]), &s(&["y"]), &t).unwrap(), 0.0);
        let v = embedding_average(&s(&["x", "y"]), &s(&["x"]), &t).unwrap();
        assert!((v - FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn vector_extrema_examples() {
        let t = table();
        assert_eq!(
            extrema_vector(&[t.lookup("x"), t.lookup("n")], 2),
            vec![-2.0, 0.0]
        );
        let same = s(&["x", "p", "z"]);
        assert!((vector_extrema(&same, &same, &t).unwrap() - 1.0).abs() < 1e-12);
        let v = vector_extrema(&s(&["x", "z"]), &s(&["w"]), &t).unwrap();
        assert!((v - 1.0 / 10f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn greedy_matching_examples() {
        let t = table();
        let same = s(&["x", "p"]);
        assert!((greedy_matching(&same, &same, &t).unwrap() - 1.0).abs() < 1e-12);
        assert!((greedy_matching(&s(&["x"]), &s(&["y", "x"]), &t).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(greedy_matching(&s(&["x"]), &s(&["y"]), &t).unwrap(), 0.0);
    }

    #[test]
    fn greedy_matching_symmetric() {
        let t = table();
        let a = s(&["x", "p", "z"]);
        let b = s(&["n", "y"]);
        assert_eq!(
            greedy_matching(&a, &b, &t).unwrap(),
            greedy_matching(&b, &a, &t).unwrap()
        );
    }

    #[test]
    fn bertscore_examples() {
        let m = vec![vec![0.3, 0.4], vec![1.0, -1.0]];
        assert!((bertscore_f1(&m, &m).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            bertscore_f1(&[vec![1.0, 0.0]], &[vec![0.0, 1.0]]).unwrap(),
            0.0
        );
        let v = bertscore_f1(&[vec![1.0, 0.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bertscore_dim_mismatch() {
        assert!(matches!(
            bertscore_f1(&[vec![1.0, 0.0]], &[vec![1.0, 0.0, 0.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
