//! Token and sentence vectors.
//!
//! Two sources are supported: static word vectors in the usual whitespace
//! separated text format, and a precomputed store of sentence vectors (and
//! optional token matrices) exported offline by a contextual encoder.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    /// Unknown tokens contribute the zero vector.
    #[default]
    ZeroVector,
    /// Unknown tokens contribute the mean of all table vectors.
    MeanVector,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
    mean: Vec<f64>,
    zeros: Vec<f64>,
    oov_policy: OovPolicy,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            entries: HashMap::new(),
            mean: vec![0.0; dim],
            zeros: vec![0.0; dim],
            oov_policy: OovPolicy::ZeroVector,
        }
    }

    pub fn with_oov_policy(mut self, policy: OovPolicy) -> Self {
        self.oov_policy = policy;
        self
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite embedding component"));
        }
        let token = token.into();
        let n_before = self.entries.len() as f64;
        if let Some(old) = self.entries.insert(token, vector.clone()) {
            // replacement: adjust the running mean without changing the count
            for ((m, o), v) in self.mean.iter_mut().zip(&old).zip(&vector) {
                *m += (v - o) / n_before;
            }
        } else {
            let n = n_before + 1.0;
            for (m, v) in self.mean.iter_mut().zip(&vector) {
                *m += (v - *m) / n;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov_policy
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    /// Vector for `token`, falling back to the OOV policy.
    pub fn lookup(&self, token: &str) -> &[f64] {
        match self.entries.get(token) {
            Some(v) => v,
            None => match self.oov_policy {
                OovPolicy::ZeroVector => &self.zeros,
                OovPolicy::MeanVector => &self.mean,
            },
        }
    }

    /// One row per token, OOV rows resolved by the policy.
    pub fn token_matrix(&self, tokens: &[String]) -> Vec<Vec<f64>> {
        tokens.iter().map(|t| self.resolve(t)).collect()
    }

    fn resolve(&self, token: &str) -> Vec<f64> {
        self.lookup(token).to_vec()
    }
}

/// Parses `token c1 c2 ... cd` lines. The dimension is taken from the first
/// non-empty line; a lone `count dim` header line (word2vec style) is skipped.
pub fn load_word_vectors(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_word_vectors(&body, path)
}

pub fn parse_word_vectors(body: &str, origin: &Path) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    for (idx, line) in body.lines().enumerate() {
        let lineno = idx + 1;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if table.is_none()
            && rest.len() == 1
            && token.parse::<usize>().is_ok()
            && rest[0].parse::<usize>().is_ok()
        {
            continue;
        }
        let mut vector = Vec::with_capacity(rest.len());
        for f in &rest {
            let x: f64 = f.parse().map_err(|_| {
                Error::parse(origin, lineno, format!("non-numeric component `{f}`"))
            })?;
            if !x.is_finite() {
                return Err(Error::parse(origin, lineno, "non-finite component"));
            }
            vector.push(x);
        }
        let t = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
        if vector.is_empty() || vector.len() != t.dim {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected {} components, found {}", t.dim, vector.len()),
            ));
        }
        t.insert(token, vector)
            .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
    }
    table.ok_or_else(|| Error::parse(origin, 0, "no vectors found; dimension undeterminable"))
}

/// A pooled sentence representation.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceVector {
    pub vector: Vec<f64>,
    pub token_count: usize,
}

impl SentenceVector {
    pub fn new(vector: Vec<f64>) -> Self {
        SentenceVector {
            vector,
            token_count: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Component-wise arithmetic mean of the token vectors.
///
/// Uses a running mean, so `n` copies of one token pool to that token's
/// vector bit for bit.
pub fn average_pool<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> Result<SentenceVector> {
    if tokens.is_empty() {
        return Err(Error::invalid("cannot pool an empty token list"));
    }
    let mut acc = vec![0.0; table.dim()];
    for (k, token) in tokens.iter().enumerate() {
        let v = table.lookup(token.as_ref());
        let n = (k + 1) as f64;
        for (a, x) in acc.iter_mut().zip(v) {
            *a += (x - *a) / n;
        }
    }
    Ok(SentenceVector {
        vector: acc,
        token_count: tokens.len(),
    })
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Cosine similarity. Zero-norm inputs give 0.
///
/// # Panics
/// If the vectors differ in length.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    cosine_flagged(u, v).0
}

/// Cosine similarity plus a flag that is `true` when either input had zero
/// norm and the value was defined as 0.
pub fn cosine_flagged(u: &[f64], v: &[f64]) -> (f64, bool) {
    assert_eq!(u.len(), v.len(), "cosine of vectors with different lengths");
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return (0.0, true);
    }
    ((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0), false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub dim: usize,
    #[serde(default = "default_pooling")]
    pub pooling: String,
    #[serde(default = "default_layer")]
    pub layer: String,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

fn default_pooling() -> String {
    "mean".into()
}

fn default_layer() -> String {
    "last".into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub tokens: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct StoreLine {
    key: String,
    #[serde(default)]
    vector: Option<Vec<f64>>,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    matrix: Option<Vec<Vec<f64>>>,
}

/// Sentence vectors and token matrices keyed by `<pair_id>/<role>`.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbeddingStore {
    pub header: StoreHeader,
    sentence_vectors: HashMap<String, Vec<f64>>,
    token_matrices: HashMap<String, TokenMatrix>,
    warnings: Vec<String>,
}

impl PrecomputedEmbeddingStore {
    pub fn key(pair_id: &str, role: &str) -> String {
        format!("{pair_id}/{role}")
    }

    pub fn dim(&self) -> usize {
        self.header.dim
    }

    pub fn sentence_vector(&self, key: &str) -> Option<&[f64]> {
        self.sentence_vectors.get(key).map(Vec::as_slice)
    }

    pub fn token_matrix(&self, key: &str) -> Option<&TokenMatrix> {
        self.token_matrices.get(key)
    }

    pub fn len(&self) -> usize {
        self.sentence_vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentence_vectors.is_empty()
    }

    /// Non-fatal issues found while loading.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&body, path)
    }

    pub fn parse(body: &str, origin: &Path) -> Result<Self> {
        let mut lines = body
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 0, "store is empty; header line required"))?;
        let header: StoreHeader = serde_json::from_str(first)
            .map_err(|e| Error::parse(origin, 1, format!("bad header: {e}")))?;
        if header.dim == 0 {
            return Err(Error::parse(origin, 1, "header dim must be positive"));
        }
        let mut store = PrecomputedEmbeddingStore {
            header,
            sentence_vectors: HashMap::new(),
            token_matrices: HashMap::new(),
            warnings: Vec::new(),
        };
        if store.header.pooling != "mean" {
            store.warnings.push(format!(
                "header pooling is `{}`, expected `mean`",
                store.header.pooling
            ));
        }
        let dim = store.header.dim;
        for (idx, line) in lines {
            let lineno = idx + 1;
            let entry: StoreLine = serde_json::from_str(line)
                .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
            let check = |v: &[f64]| -> Result<()> {
                if v.len() != dim {
                    return Err(Error::parse(
                        origin,
                        lineno,
                        format!("expected width {dim}, found {}", v.len()),
                    ));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::parse(origin, lineno, "non-finite component"));
                }
                Ok(())
            };
            if entry.vector.is_none() && entry.matrix.is_none() {
                return Err(Error::parse(
                    origin,
                    lineno,
                    "entry has neither `vector` nor `matrix`",
                ));
            }
            if let Some(v) = entry.vector {
                check(&v)?;
                if store
                    .sentence_vectors
                    .insert(entry.key.clone(), v)
                    .is_some()
                {
                    store.warnings.push(format!(
                        "line {lineno}: duplicate vector key `{}`",
                        entry.key
                    ));
                }
            }
            if let Some(rows) = entry.matrix {
                if rows.is_empty() {
                    return Err(Error::parse(origin, lineno, "empty token matrix"));
                }
                for r in &rows {
                    check(r)?;
                }
                let tokens = entry.tokens.unwrap_or_default();
                if !tokens.is_empty() && tokens.len() != rows.len() {
                    store.warnings.push(format!(
                        "line {lineno}: {} tokens but {} matrix rows",
                        tokens.len(),
                        rows.len()
                    ));
                }
                if store
                    .token_matrices
                    .insert(entry.key.clone(), TokenMatrix { tokens, rows })
                    .is_some()
                {
                    store.warnings.push(format!(
                        "line {lineno}: duplicate matrix key `{}`",
                        entry.key
                    ));
                }
            }
        }
        for w in &store.warnings {
            log::warn!("{}: {w}", origin.display());
        }
        Ok(store)
    }
}

/// Turns text into sentence vectors, preferring precomputed vectors and
/// falling back to pooling static word vectors.
#[derive(Debug, Clone, Default)]
pub struct Encoder {
    pub table: Option<EmbeddingTable>,
    pub store: Option<PrecomputedEmbeddingStore>,
}

impl Encoder {
    pub fn from_table(table: EmbeddingTable) -> Self {
        Encoder {
            table: Some(table),
            store: None,
        }
    }

    pub fn from_store(store: PrecomputedEmbeddingStore) -> Self {
        Encoder {
            table: None,
            store: Some(store),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.store
            .as_ref()
            .map(PrecomputedEmbeddingStore::dim)
            .or_else(|| self.table.as_ref().map(EmbeddingTable::dim))
    }

    /// Encodes the text identified by `key` (a store key) with tokens
    /// `tokens`.
    pub fn encode(&self, key: &str, tokens: &[String]) -> Result<SentenceVector> {
        if let Some(store) = &self.store {
            if let Some(v) = store.sentence_vector(key) {
                let token_count = store.token_matrix(key).map_or(1, |m| m.rows.len());
                return Ok(SentenceVector {
                    vector: v.to_vec(),
                    token_count,
                });
            }
        }
        match &self.table {
            Some(table) => average_pool(tokens, table),
            None => Err(Error::MissingEmbedding(key.to_owned())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2);
        t.insert("a", vec![1.0, 3.0]).unwrap();
        t.insert("b", vec![3.0, 5.0]).unwrap();
        t
    }

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn parse_minimal_file() {
        let t = parse_word_vectors("a 1 0\nb 0 1\n", Path::new("v.txt")).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("b"), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn parse_rejects_bad_number_and_width() {
        assert!(matches!(
            parse_word_vectors("a 1 0\nc 1 x\n", Path::new("v.txt")),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_word_vectors("a 1 0\nc 1 2 3\n", Path::new("v.txt")),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_word_vectors("", Path::new("v.txt")).is_err());
    }

    #[test]
    fn parse_skips_word2vec_header() {
        let t = parse_word_vectors("2 3\na 1 2 3\nb 4 5 6\n", Path::new("v.txt")).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn pooling_examples() {
        let t = table();
        assert_eq!(
            average_pool(&toks(&["a", "b"]), &t).unwrap().vector,
            vec![2.0, 4.0]
        );
        assert_eq!(
            average_pool(&toks(&["a"]), &t).unwrap().vector,
            vec![1.0, 3.0]
        );
        let mut z = EmbeddingTable::new(2);
        z.insert("a", vec![2.0, 2.0]).unwrap();
        assert_eq!(
            average_pool(&toks(&["a", "unk"]), &z).unwrap().vector,
            vec![1.0, 1.0]
        );
        assert!(average_pool::<String>(&[], &t).is_err());
    }

    #[test]
    fn mean_vector_policy() {
        let t = table().with_oov_policy(OovPolicy::MeanVector);
        assert_eq!(t.lookup("zzz"), &[2.0, 4.0]);
        assert_eq!(
            average_pool(&toks(&["zzz"]), &t).unwrap().vector,
            vec![2.0, 4.0]
        );
        let z = table();
        assert_eq!(z.lookup("zzz"), &[0.0, 0.0]);
        assert_eq!(z.token_matrix(&toks(&["zzz"])), vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[1.0, 0.0]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(cosine_flagged(&[0.0, 0.0], &[1.0, 0.0]), (0.0, true));
    }

    #[test]
    fn store_roundtrip() {
        let body = r#"{"dim": 2, "pooling": "mean", "layer": "last"}
{"key": "p1/context", "vector": [1.0, 0.0]}
{"key": "p1/response", "vector": [0.5, 0.5], "tokens": ["x", "y"], "matrix": [[1.0, 0.0], [0.0, 1.0]]}
"#;
        let store = PrecomputedEmbeddingStore::parse(body, Path::new("s.jsonl")).unwrap();
        assert_eq!(store.dim(), 2);
        assert_eq!(store.len(), 2);
        assert!(store.warnings().is_empty());
        assert_eq!(store.token_matrix("p1/response").unwrap().rows.len(), 2);
        let enc = Encoder::from_store(store);
        let v = enc.encode("p1/response", &[]).unwrap();
        assert_eq!(v.vector, vec![0.5, 0.5]);
        assert_eq!(v.token_count, 2);
        assert!(matches!(
            enc.encode("p2/response", &[]),
            Err(Error::MissingEmbedding(_))
        ));
    }

    #[test]
    fn store_rejects_width_mismatch() {
        let body = "{\"dim\": 3}\n{\"key\": \"k\", \"vector\": [1.0]}\n";
        assert!(matches!(
            PrecomputedEmbeddingStore::parse(body, Path::new("s.jsonl")),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, dim)
    }

    proptest! {
        #[test]
        fn cosine_properties(u in vec_strategy(5), v in vec_strategy(5), alpha in 0.01f64..100.0) {
            prop_assume!(norm(&u) > 1e-6 && norm(&v) > 1e-6);
            let c = cosine(&u, &v);
            prop_assert!((-1.0..=1.0).contains(&c));
            prop_assert!((c - cosine(&v, &u)).abs() < 1e-12);
            let scaled: Vec<f64> = u.iter().map(|x| x * alpha).collect();
            prop_assert!((c - cosine(&scaled, &v)).abs() < 1e-12);
        }

        #[test]
        fn pooling_permutation_invariant(seed in any::<u64>(), n in 1usize..8) {
            use rand::seq::SliceRandom;
            let mut t = EmbeddingTable::new(3);
            let mut tokens = Vec::new();
            for i in 0..n {
                let x = i as f64;
                t.insert(format!("t{i}"), vec![x, x * 0.5 - 1.0, 2.0 - x]).unwrap();
                tokens.push(format!("t{i}"));
            }
            tokens.push("oov".into());
            let a = average_pool(&tokens, &t).unwrap();
            tokens.shuffle(&mut crate::rng::from_seed(seed));
            let b = average_pool(&tokens, &t).unwrap();
            for (x, y) in a.vector.iter().zip(&b.vector) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn pooling_copies_is_identity(v in vec_strategy(4), n in 1usize..20) {
            let mut t = EmbeddingTable::new(4);
            t.insert("w", v.clone()).unwrap();
            let tokens = vec!["w".to_string(); n];
            prop_assert_eq!(average_pool(&tokens, &t).unwrap().vector, v);
        }
    }
}
