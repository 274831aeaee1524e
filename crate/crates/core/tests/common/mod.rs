//! Synthetic corpora with known ground truth.
//!
//! Every pair `i` gets a unit topic vector `u_i`. The context is two tokens
//! whose vectors are `u_i ± e`, so the pooled context vector is `u_i`. The
//! response is built the same way around `w_i`, a copy of `u_i` optionally
//! perturbed by paraphrase noise. A response belongs to a context iff it was
//! generated from that context's topic.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dialeval::augmentor::{AugmentedSet, Provenance};
use dialeval::corpus::DialoguePair;
use dialeval::embeddings::EmbeddingTable;
use dialeval::rng::{self, Rng};
use rand::seq::SliceRandom;
use rand::Rng as _;

/// Standard normal via Box-Muller.
pub fn normal(rng: &mut Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Topics are grouped around this many centroids; 0 means independent
    /// topics.
    pub clusters: usize,
    /// Weight of the cluster centroid in each topic (before normalizing).
    pub cluster_weight: f64,
    /// Standard deviation of the paraphrase noise added to responses and
    /// clean augmented variants.
    pub paraphrase_noise: f64,
    /// Augmented variants per training pair.
    pub k: usize,
    /// Number of the `k` variants replaced by another pair's response.
    pub corrupted_per_pair: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 16,
            n_train: 200,
            n_test: 50,
            clusters: 0,
            cluster_weight: 0.0,
            paraphrase_noise: 0.0,
            k: 5,
            corrupted_per_pair: 0,
            seed: 1,
        }
    }
}

pub struct Synth {
    pub table: EmbeddingTable,
    pub train: Vec<DialoguePair>,
    /// Held-out pairs with a 0/1 match label.
    pub test: Vec<(DialoguePair, f64)>,
    /// External augmentation candidates for every training pair.
    pub candidates: BTreeMap<String, AugmentedSet>,
    /// Variant ids that were planted as corrupted.
    pub corrupted: Vec<String>,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| normal(rng)).collect()
}

struct Builder<'a> {
    cfg: &'a SynthConfig,
    rng: Rng,
    table: EmbeddingTable,
}

impl Builder<'_> {
    /// Two tokens named `<name>x` / `<name>y` pooling exactly to `center`.
    fn utterance(&mut self, name: &str, center: &[f64]) -> String {
        let e: Vec<f64> = gaussian(&mut self.rng, self.cfg.dim)
            .iter()
            .map(|x| 0.3 * x)
            .collect();
        let a: Vec<f64> = center.iter().zip(&e).map(|(c, d)| c + d).collect();
        let b: Vec<f64> = center.iter().zip(&e).map(|(c, d)| c - d).collect();
        self.table.insert(format!("{name}x"), a).unwrap();
        self.table.insert(format!("{name}y"), b).unwrap();
        format!("{name}x {name}y")
    }

    fn paraphrase(&mut self, topic: &[f64]) -> Vec<f64> {
        let s = self.cfg.paraphrase_noise;
        if s == 0.0 {
            return topic.to_vec();
        }
        let g = gaussian(&mut self.rng, self.cfg.dim);
        unit(topic.iter().zip(&g).map(|(t, n)| t + s * n).collect())
    }
}

pub fn generate(cfg: &SynthConfig) -> Synth {
    let mut b = Builder {
        cfg,
        rng: rng::from_seed(cfg.seed),
        table: EmbeddingTable::new(cfg.dim),
    };
    assert!(
        cfg.n_train >= 2 && cfg.n_test != 1,
        "every pair needs a partner in its own split"
    );
    let n = cfg.n_train + cfg.n_test;
    let centroids: Vec<Vec<f64>> = (0..cfg.clusters)
        .map(|_| unit(gaussian(&mut b.rng, cfg.dim)))
        .collect();
    let cluster_of: Vec<usize> = (0..n)
        .map(|i| {
            if cfg.clusters == 0 {
                0
            } else {
                i % cfg.clusters
            }
        })
        .collect();
    let topics: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let g = unit(gaussian(&mut b.rng, cfg.dim));
            if cfg.clusters == 0 {
                g
            } else {
                let c = &centroids[cluster_of[i]];
                unit(
                    c.iter()
                        .zip(&g)
                        .map(|(c, g)| cfg.cluster_weight * c + g)
                        .collect(),
                )
            }
        })
        .collect();

    let mut pairs = Vec::with_capacity(n);
    let mut responses = Vec::with_capacity(n);
    for (i, topic) in topics.iter().enumerate() {
        let ctx = b.utterance(&format!("ctx{i}"), topic);
        let w = b.paraphrase(topic);
        let rsp = b.utterance(&format!("rsp{i}"), &w);
        responses.push(rsp.clone());
        pairs.push(DialoguePair::new(format!("d{i}"), vec![ctx], rsp));
    }

    // another index in the same cluster (any other index without clusters)
    let partner = |rng: &mut Rng, i: usize, lo: usize, hi: usize| -> usize {
        loop {
            let j = rng.gen_range(lo..hi);
            if j != i && cluster_of[j] == cluster_of[i] {
                return j;
            }
        }
    };

    let mut candidates = BTreeMap::new();
    let mut corrupted = Vec::new();
    for i in 0..cfg.n_train {
        let mut slots: Vec<usize> = (0..cfg.k).collect();
        slots.shuffle(&mut b.rng);
        let bad: Vec<usize> = slots[..cfg.corrupted_per_pair].to_vec();
        let mut variants = Vec::with_capacity(cfg.k);
        for j in 0..cfg.k {
            if bad.contains(&j) {
                let other = partner(&mut b.rng, i, 0, cfg.n_train);
                variants.push(responses[other].clone());
                corrupted.push(format!("d{i}#aug{j}"));
            } else {
                let w = b.paraphrase(&topics[i]);
                variants.push(b.utterance(&format!("par{i}v{j}"), &w));
            }
        }
        candidates.insert(
            format!("d{i}"),
            AugmentedSet {
                pair_id: format!("d{i}"),
                original: Some(responses[i].clone()),
                variants,
                provenance: Provenance::External,
                unchanged: Vec::new(),
            },
        );
    }

    let mut test = Vec::new();
    for (i, pair) in pairs.iter().enumerate().skip(cfg.n_train) {
        test.push((pair.clone(), 1.0));
        let j = partner(&mut b.rng, i, cfg.n_train, n);
        let neg = DialoguePair::new(
            format!("d{i}neg"),
            pair.context.clone(),
            responses[j].clone(),
        );
        test.push((neg, 0.0));
    }
    let train = pairs[..cfg.n_train].to_vec();
    Synth {
        table: b.table,
        train,
        test,
        candidates,
        corrupted,
    }
}

pub struct SynthFiles {
    pub vectors: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub candidates: PathBuf,
}

fn jsonl<T: serde::Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(&it).unwrap());
        s.push('\n');
    }
    s
}

impl Synth {
    pub fn write(&self, dir: &Path) -> SynthFiles {
        let mut tokens: Vec<String> = Vec::new();
        for p in self.train.iter().chain(self.test.iter().map(|(p, _)| p)) {
            tokens.extend(p.context_tokens());
            tokens.extend(p.response_tokens());
        }
        for set in self.candidates.values() {
            for v in &set.variants {
                tokens.extend(dialeval::text::tokenize(v));
            }
        }
        tokens.retain(|t| t != dialeval::text::TURN_SEPARATOR);
        tokens.sort();
        tokens.dedup();
        let mut vectors = String::new();
        for t in &tokens {
            let v = self.table.get(t).unwrap();
            let _ = write!(vectors, "{t}");
            for x in v {
                let _ = write!(vectors, " {x}");
            }
            vectors.push('\n');
        }
        let files = SynthFiles {
            vectors: dir.join("vectors.txt"),
            train: dir.join("train.jsonl"),
            test: dir.join("test.jsonl"),
            candidates: dir.join("candidates.jsonl"),
        };
        fs::write(&files.vectors, vectors).unwrap();
        fs::write(&files.train, jsonl(&self.train)).unwrap();
        fs::write(&files.test, jsonl(self.test.iter().map(|(p, _)| p))).unwrap();
        let cands = self
            .candidates
            .values()
            .map(|s| serde_json::json!({"pair_id": s.pair_id, "variants": s.variants}));
        fs::write(&files.candidates, jsonl(cands)).unwrap();
        files
    }

    pub fn test_pairs(&self) -> Vec<DialoguePair> {
        self.test.iter().map(|(p, _)| p.clone()).collect()
    }

    pub fn test_labels(&self) -> Vec<f64> {
        self.test.iter().map(|(_, l)| *l).collect()
    }
}

/// Fraction of scores on the right side of 0.5.
pub fn accuracy(scores: &[f64], labels: &[f64]) -> f64 {
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| (**s >= 0.5) == (**l >= 0.5))
        .count();
    hits as f64 / scores.len() as f64
}
