//! Correlation and agreement statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::corpus::{normalize_score, AnnotationSet, Aspect};
use crate::error::{Error, Result};
use crate::rng;

/// Number of rating categories (raw scores 1..=6).
pub const CATEGORIES: usize = 6;

/// Smallest accepted permutation count.
pub const MIN_PERMUTATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Correlation {
    Pearson,
    Spearman,
}

impl Correlation {
    pub fn compute(self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            Correlation::Pearson => pearson(x, y),
            Correlation::Spearman => spearman(x, y),
        }
    }
}

impl FromStr for Correlation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pearson" => Ok(Correlation::Pearson),
            "spearman" => Ok(Correlation::Spearman),
            other => Err(Error::invalid(format!("unknown statistic `{other}`"))),
        }
    }
}

impl fmt::Display for Correlation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Correlation::Pearson => "pearson",
            Correlation::Spearman => "spearman",
        })
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "series lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::invalid(format!(
            "correlation needs at least 3 points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("series contain non-finite values"));
    }
    Ok(())
}

/// Deviations from the mean and their norm; errors on a constant series.
fn centered(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let ss: f64 = c.iter().map(|d| d * d).sum();
    if ss == 0.0 {
        return Err(Error::invalid(
            "correlation undefined for a constant series",
        ));
    }
    Ok((c, ss.sqrt()))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (cx, nx) = centered(x)?;
    let (cy, ny) = centered(y)?;
    let cov: f64 = cx.iter().zip(&cy).map(|(a, b)| a * b).sum();
    Ok((cov / (nx * ny)).clamp(-1.0, 1.0))
}

/// Fractional ranks starting at 1; tied values share their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&ranks(x), &ranks(y))
}

/// Two-sided permutation p-value: `(1 + #{|stat_perm| >= |stat_obs|}) /
/// (1 + n_perms)`. Permutation `i` shuffles `y` with its own stream derived
/// from `(seed, i)`.
pub fn permutation_p_value(
    x: &[f64],
    y: &[f64],
    statistic: Correlation,
    n_perms: usize,
    seed: u64,
) -> Result<f64> {
    if n_perms < MIN_PERMUTATIONS {
        return Err(Error::invalid(format!(
            "at least {MIN_PERMUTATIONS} permutations required, got {n_perms}"
        )));
    }
    check_pair(x, y)?;
    let (x, y) = match statistic {
        Correlation::Pearson => (x.to_vec(), y.to_vec()),
        Correlation::Spearman => (ranks(x), ranks(y)),
    };
    let (cx, nx) = centered(&x)?;
    let (cy, ny) = centered(&y)?;
    let denom = nx * ny;
    let stat = |ys: &[f64]| cx.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / denom;
    let observed = stat(&cy).abs();
    // ties in value (up to rounding) count as "at least as extreme"
    let bar = observed - 1e-12 * observed.max(1.0);
    let mut shuffled = cy.clone();
    let mut hits = 0usize;
    for i in 0..n_perms {
        shuffled.copy_from_slice(&cy);
        shuffled.shuffle(&mut rng::derive_indexed(seed, "permutation", i as u64));
        if stat(&shuffled).abs() >= bar {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + n_perms) as f64)
}

/// Fleiss' kappa from an items x categories count table. Every row must
/// sum to the same rater count `m >= 2`.
pub fn fleiss_kappa_counts(table: &[Vec<usize>]) -> Result<f64> {
    let first = table
        .first()
        .ok_or_else(|| Error::invalid("no rated items"))?;
    let k = first.len();
    let m: usize = first.iter().sum();
    if m < 2 {
        return Err(Error::invalid("every item needs at least 2 ratings"));
    }
    let mut totals = vec![0usize; k];
    let mut p_bar = 0.0;
    for (i, row) in table.iter().enumerate() {
        if row.len() != k {
            return Err(Error::invalid("rows have differing category counts"));
        }
        if row.iter().sum::<usize>() != m {
            return Err(Error::invalid(format!(
                "item {i} has a different number of ratings than item 0"
            )));
        }
        let agree: usize = row.iter().map(|&c| c * c).sum::<usize>() - m;
        p_bar += agree as f64 / (m * (m - 1)) as f64;
        for (t, c) in totals.iter_mut().zip(row) {
            *t += c;
        }
    }
    let n = table.len() as f64;
    p_bar /= n;
    let all = n * m as f64;
    let p_e: f64 = totals.iter().map(|&t| (t as f64 / all).powi(2)).sum();
    if 1.0 - p_e <= f64::EPSILON {
        // every rating fell in a single category
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Fleiss' kappa over the six rating categories for one aspect. Pairs
/// nobody rated for `aspect` are skipped.
pub fn fleiss_kappa(annotations: &[AnnotationSet], aspect: Aspect) -> Result<f64> {
    let table: Vec<Vec<usize>> = annotations
        .iter()
        .filter_map(|set| {
            let mut row = vec![0usize; CATEGORIES];
            let mut any = false;
            for r in set.for_aspect(aspect) {
                row[usize::from(r.raw_score) - 1] += 1;
                any = true;
            }
            any.then_some(row)
        })
        .collect();
    fleiss_kappa_counts(&table)
}

/// Cohen's kappa for two raters over categories `1..=6`.
pub fn cohen_kappa(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(
            "rating lists must be non-empty and of equal length",
        ));
    }
    let mut pa = [0.0; CATEGORIES];
    let mut pb = [0.0; CATEGORIES];
    let mut agree = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        normalize_score(x)?;
        normalize_score(y)?;
        pa[usize::from(x) - 1] += 1.0;
        pb[usize::from(y) - 1] += 1.0;
        if x == y {
            agree += 1.0;
        }
    }
    let n = a.len() as f64;
    let p_o = agree / n;
    let p_e: f64 = pa.iter().zip(&pb).map(|(x, y)| x * y / (n * n)).sum();
    if 1.0 - p_e <= f64::EPSILON {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    pub avg: f64,
    pub max: f64,
    /// Number of annotator pairs compared.
    pub pairs: usize,
}

/// Average and maximum of `statistic` over every pair of series.
pub fn pairwise_agreement(series: &[Vec<f64>], statistic: Correlation) -> Result<Agreement> {
    if series.len() < 2 {
        return Err(Error::invalid("agreement needs at least 2 annotators"));
    }
    let mut values = Vec::new();
    for i in 0..series.len() {
        for j in i + 1..series.len() {
            values.push(statistic.compute(&series[i], &series[j])?);
        }
    }
    Ok(Agreement {
        avg: values.iter().sum::<f64>() / values.len() as f64,
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        pairs: values.len(),
    })
}

/// Human-Avg / Human-Max: pairwise correlation between annotators over the
/// pairs every annotator rated for `aspect`, on normalized scores.
pub fn human_agreement(
    annotations: &[AnnotationSet],
    aspect: Aspect,
    statistic: Correlation,
) -> Result<Agreement> {
    let mut per_annotator: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for set in annotations {
        for r in set.for_aspect(aspect) {
            per_annotator
                .entry(r.annotator_id.as_str())
                .or_default()
                .insert(set.pair_id.as_str(), normalize_score(r.raw_score)?);
        }
    }
    if per_annotator.len() < 2 {
        return Err(Error::invalid(format!(
            "agreement needs at least 2 annotators, found {}",
            per_annotator.len()
        )));
    }
    let mut common: Option<BTreeSet<&str>> = None;
    for scores in per_annotator.values() {
        let ids: BTreeSet<&str> = scores.keys().copied().collect();
        common = Some(match common {
            None => ids,
            Some(c) => c.intersection(&ids).copied().collect(),
        });
    }
    let common = common.unwrap_or_default();
    let series: Vec<Vec<f64>> = per_annotator
        .values()
        .map(|scores| common.iter().map(|id| scores[id]).collect())
        .collect();
    pairwise_agreement(&series, statistic)
}
