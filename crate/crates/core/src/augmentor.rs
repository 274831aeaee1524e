//! Positive data augmentation.
//!
//! EDA edits (synonym replacement, random insertion, random swap, random
//! deletion) are implemented here. Generation-based variants, e.g. beam
//! outputs of a trained Seq2Seq model, are read from a JSONL candidates file.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::DialoguePair;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: HashMap<String, Vec<String>>,
}

impl SynonymLexicon {
    /// Builds a lexicon; a token listed as its own synonym is dropped from
    /// its list, and tokens left with no synonyms are omitted.
    pub fn from_pairs<I, K, V, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut entries: HashMap<String, Vec<String>> = HashMap::new();
        for (token, syns) in pairs {
            let token = token.into();
            if token.is_empty() {
                return Err(Error::invalid("empty token in synonym lexicon"));
            }
            let list = entries.entry(token.clone()).or_default();
            for s in syns {
                let s = s.into();
                if !s.is_empty() && s != token && !list.contains(&s) {
                    list.push(s);
                }
            }
        }
        entries.retain(|_, v| !v.is_empty());
        Ok(SynonymLexicon { entries })
    }

    /// Reads `token<TAB>syn1,syn2,...` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (idx, line) in body.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (token, syns) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, idx + 1, "expected `token<TAB>syn1,syn2`"))?;
            let syns: Vec<String> = syns
                .split(',')
                .map(|s| s.trim().to_owned())
                .filter(|s| !s.is_empty())
                .collect();
            if syns.is_empty() {
                return Err(Error::parse(path, idx + 1, "no synonyms listed"));
            }
            rows.push((token.trim().to_owned(), syns));
        }
        Self::from_pairs(rows)
    }

    pub fn synonyms(&self, token: &str) -> Option<&[String]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        self.synonyms(a).is_some_and(|s| s.iter().any(|x| x == b))
            || self.synonyms(b).is_some_and(|s| s.iter().any(|x| x == a))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdaOperation {
    SynonymReplacement,
    RandomInsertion,
    RandomSwap,
    RandomDeletion,
}

impl EdaOperation {
    pub const ALL: [EdaOperation; 4] = [
        EdaOperation::SynonymReplacement,
        EdaOperation::RandomInsertion,
        EdaOperation::RandomSwap,
        EdaOperation::RandomDeletion,
    ];
}

impl fmt::Display for EdaOperation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdaOperation::SynonymReplacement => "synonym_replacement",
            EdaOperation::RandomInsertion => "random_insertion",
            EdaOperation::RandomSwap => "random_swap",
            EdaOperation::RandomDeletion => "random_deletion",
        })
    }
}

impl FromStr for EdaOperation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "synonym_replacement" | "sr" => EdaOperation::SynonymReplacement,
            "random_insertion" | "ri" => EdaOperation::RandomInsertion,
            "random_swap" | "rs" => EdaOperation::RandomSwap,
            "random_deletion" | "rd" => EdaOperation::RandomDeletion,
            other => return Err(Error::invalid(format!("unknown EDA operation `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdaConfig {
    pub k: usize,
    /// Fraction of positions touched by one operation.
    pub alpha: f64,
    pub operations: Vec<EdaOperation>,
    pub seed: u64,
}

impl Default for EdaConfig {
    fn default() -> Self {
        EdaConfig {
            k: 5,
            alpha: 0.1,
            operations: EdaOperation::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl EdaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.operations.is_empty() {
            return Err(Error::Config("no EDA operations enabled".into()));
        }
        Ok(())
    }

    /// Number of positions an operation touches on a sentence of `len` tokens.
    pub fn positions(&self, len: usize) -> usize {
        ((self.alpha * len as f64).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdaVariant {
    pub tokens: Vec<String>,
    pub operation: EdaOperation,
    /// The operation had no valid move and the variant equals the input.
    pub unchanged: bool,
}

/// Produces `config.k` variants, each from one uniformly chosen operation.
pub fn eda_augment(
    response: &[String],
    config: &EdaConfig,
    lexicon: &SynonymLexicon,
    rng: &mut Rng,
) -> Result<Vec<EdaVariant>> {
    config.validate()?;
    if response.is_empty() {
        return Err(Error::invalid("cannot augment an empty response"));
    }
    if lexicon.is_empty()
        && config
            .operations
            .iter()
            .all(|op| *op == EdaOperation::SynonymReplacement)
    {
        return Err(Error::Config(
            "synonym replacement is the only enabled operation but the lexicon is empty".into(),
        ));
    }
    let n = config.positions(response.len());
    let mut variants = Vec::with_capacity(config.k);
    for _ in 0..config.k {
        let op = *config.operations.choose(rng).expect("validated non-empty");
        let tokens = match op {
            EdaOperation::SynonymReplacement => synonym_replacement(response, n, lexicon, rng),
            EdaOperation::RandomInsertion => random_insertion(response, n, lexicon, rng),
            EdaOperation::RandomSwap => random_swap(response, n, rng),
            EdaOperation::RandomDeletion => random_deletion(response, n, rng),
        };
        let unchanged = tokens == response;
        variants.push(EdaVariant {
            tokens,
            operation: op,
            unchanged,
        });
    }
    Ok(variants)
}

fn synonym_replacement(
    tokens: &[String],
    n: usize,
    lexicon: &SynonymLexicon,
    rng: &mut Rng,
) -> Vec<String> {
    let mut out = tokens.to_vec();
    let mut candidates: Vec<usize> = (0..tokens.len())
        .filter(|&i| lexicon.synonyms(&tokens[i]).is_some())
        .collect();
    candidates.shuffle(rng);
    for &i in candidates.iter().take(n) {
        let syns = lexicon.synonyms(&tokens[i]).expect("filtered above");
        out[i] = syns.choose(rng).expect("non-empty").clone();
    }
    out
}

/// Inserts `n` tokens. Each is a synonym of a random word of the sentence;
/// when no word has a synonym a random word is duplicated instead, so the
/// length always grows by exactly `n`.
fn random_insertion(
    tokens: &[String],
    n: usize,
    lexicon: &SynonymLexicon,
    rng: &mut Rng,
) -> Vec<String> {
    let mut out = tokens.to_vec();
    for _ in 0..n {
        let with_syn: Vec<usize> = (0..out.len())
            .filter(|&i| lexicon.synonyms(&out[i]).is_some())
            .collect();
        let word = match with_syn.choose(rng) {
            Some(&i) => lexicon
                .synonyms(&out[i])
                .and_then(|s| s.choose(rng))
                .expect("filtered above")
                .clone(),
            None => out.choose(rng).expect("non-empty").clone(),
        };
        let at = rng.gen_range(0..=out.len());
        out.insert(at, word);
    }
    out
}

fn random_swap(tokens: &[String], n: usize, rng: &mut Rng) -> Vec<String> {
    let mut out = tokens.to_vec();
    if out.len() < 2 {
        return out;
    }
    for _ in 0..n {
        let i = rng.gen_range(0..out.len());
        let mut j = rng.gen_range(0..out.len() - 1);
        if j >= i {
            j += 1;
        }
        out.swap(i, j);
    }
    out
}

/// Deletes up to `n` positions, never the last remaining token.
fn random_deletion(tokens: &[String], n: usize, rng: &mut Rng) -> Vec<String> {
    let drop = n.min(tokens.len() - 1);
    let doomed = rand::seq::index::sample(rng, tokens.len(), drop).into_vec();
    tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| !doomed.contains(i))
        .map(|(_, t)| t.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Eda,
    External,
}

/// The `k` augmented positives for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSet {
    pub pair_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<String>,
    pub variants: Vec<String>,
    pub provenance: Provenance,
    /// Indices of variants identical to the original.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unchanged: Vec<usize>,
}

impl AugmentedSet {
    /// Stable id of the `j`-th variant, used to key pseudo-labels.
    pub fn variant_id(&self, j: usize) -> String {
        format!("{}#aug{j}", self.pair_id)
    }
}

/// EDA over a pair's response with a per-pair RNG stream.
pub fn augment_pair(
    pair: &DialoguePair,
    config: &EdaConfig,
    lexicon: &SynonymLexicon,
) -> Result<AugmentedSet> {
    let mut rng = rng::derive(config.seed, &pair.id);
    let variants = eda_augment(&pair.response_tokens(), config, lexicon, &mut rng)?;
    let unchanged = variants
        .iter()
        .enumerate()
        .filter(|(_, v)| v.unchanged)
        .map(|(j, _)| j)
        .collect();
    Ok(AugmentedSet {
        pair_id: pair.id.clone(),
        original: Some(pair.response.clone()),
        variants: variants.into_iter().map(|v| v.tokens.join(" ")).collect(),
        provenance: Provenance::Eda,
        unchanged,
    })
}

#[derive(Deserialize)]
struct RawCandidates {
    pair_id: String,
    variants: Vec<String>,
}

/// Reads `{"pair_id": ..., "variants": [...]}` lines, keeping the first `k`
/// variants of each (beam order).
pub fn load_external_candidates(
    path: impl AsRef<Path>,
    k: usize,
) -> Result<BTreeMap<String, AugmentedSet>> {
    let path = path.as_ref();
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_external_candidates(&body, k, path)
}

pub fn parse_external_candidates(
    body: &str,
    k: usize,
    origin: &Path,
) -> Result<BTreeMap<String, AugmentedSet>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut sets = BTreeMap::new();
    for (idx, line) in body.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawCandidates =
            serde_json::from_str(line).map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        if raw.pair_id.is_empty() {
            return Err(Error::parse(origin, lineno, "empty pair_id"));
        }
        if raw.variants.len() < k {
            return Err(Error::parse(
                origin,
                lineno,
                format!(
                    "{} variants for `{}`, need {k}",
                    raw.variants.len(),
                    raw.pair_id
                ),
            ));
        }
        let variants: Vec<String> = raw.variants.into_iter().take(k).collect();
        if variants.iter().any(|v| v.trim().is_empty()) {
            return Err(Error::parse(origin, lineno, "empty variant"));
        }
        let set = AugmentedSet {
            pair_id: raw.pair_id.clone(),
            original: None,
            variants,
            provenance: Provenance::External,
            unchanged: Vec::new(),
        };
        if sets.insert(raw.pair_id.clone(), set).is_some() {
            return Err(Error::DuplicateId(raw.pair_id));
        }
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn lex() -> SynonymLexicon {
        SynonymLexicon::from_pairs([
            ("good", vec!["fine", "nice"]),
            ("morning", vec!["dawn"]),
            ("cat", vec!["cat"]),
        ])
        .unwrap()
    }

    fn config(ops: &[EdaOperation], alpha: f64) -> EdaConfig {
        EdaConfig {
            k: 5,
            alpha,
            operations: ops.to_vec(),
            seed: 3,
        }
    }

    #[test]
    fn self_synonym_is_dropped() {
        let l = lex();
        assert!(l.synonyms("cat").is_none());
        assert!(l.are_synonyms("fine", "good"));
        assert!(!l.are_synonyms("good", "dawn"));
    }

    #[test]
    fn swap_with_zero_alpha_preserves_length() {
        let s = t("a b c d");
        let mut rng = rng::from_seed(1);
        let out = eda_augment(
            &s,
            &config(&[EdaOperation::RandomSwap], 0.0),
            &lex(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.len(), 5);
        for v in &out {
            assert_eq!(v.tokens.len(), 4);
            let mut a = v.tokens.clone();
            let mut b = s.clone();
            a.sort();
            b.sort();
            assert_eq!(a, b);
            assert!(!v.unchanged);
        }
    }

    #[test]
    fn deletion_keeps_single_token() {
        let mut rng = rng::from_seed(1);
        let out = eda_augment(
            &t("hello"),
            &config(&[EdaOperation::RandomDeletion], 1.0),
            &lex(),
            &mut rng,
        )
        .unwrap();
        for v in out {
            assert_eq!(v.tokens, t("hello"));
            assert!(v.unchanged);
        }
    }

    #[test]
    fn single_token_swap_is_flagged() {
        let mut rng = rng::from_seed(1);
        let out = eda_augment(
            &t("hello"),
            &config(&[EdaOperation::RandomSwap], 0.5),
            &lex(),
            &mut rng,
        )
        .unwrap();
        assert!(out.iter().all(|v| v.unchanged && v.tokens == t("hello")));
    }

    #[test]
    fn synonym_replacement_neighbourhood() {
        // n = max(1, round(0.1 * 2)) = 1: exactly one of the replaceable
        // positions changes, to one of its synonyms
        let allowed = [t("fine morning"), t("nice morning"), t("good dawn")];
        let mut seen_fine = false;
        for seed in 0..50 {
            let mut rng = rng::from_seed(seed);
            let out = eda_augment(
                &t("good morning"),
                &config(&[EdaOperation::SynonymReplacement], 0.1),
                &lex(),
                &mut rng,
            )
            .unwrap();
            for v in out {
                assert!(allowed.contains(&v.tokens), "{:?}", v.tokens);
                seen_fine |= v.tokens == t("fine morning");
            }
        }
        assert!(seen_fine);
    }

    #[test]
    fn empty_lexicon_with_only_replacement_errors() {
        let mut rng = rng::from_seed(1);
        let r = eda_augment(
            &t("a b"),
            &config(&[EdaOperation::SynonymReplacement], 0.1),
            &SynonymLexicon::default(),
            &mut rng,
        );
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(eda_augment(
            &[],
            &config(&[EdaOperation::RandomSwap], 0.1),
            &lex(),
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn augment_pair_is_deterministic() {
        let pair = DialoguePair::new(
            "p1",
            vec!["how are you".into()],
            "good morning to you my friend",
        );
        let cfg = EdaConfig {
            seed: 9,
            ..EdaConfig::default()
        };
        let a = augment_pair(&pair, &cfg, &lex()).unwrap();
        let b = augment_pair(&pair, &cfg, &lex()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.variants.len(), 5);
        assert_eq!(a.variant_id(2), "p1#aug2");
    }

    #[test]
    fn external_candidates() {
        let origin = Path::new("gen.jsonl");
        let five = r#"{"pair_id":"a","variants":["1","2","3","4","5"]}"#;
        let sets = parse_external_candidates(five, 5, origin).unwrap();
        assert_eq!(sets["a"].variants, vec!["1", "2", "3", "4", "5"]);
        assert_eq!(sets["a"].provenance, Provenance::External);

        let three = r#"{"pair_id":"a","variants":["1","2","3"]}"#;
        assert!(parse_external_candidates(three, 5, origin).is_err());

        let seven = r#"{"pair_id":"a","variants":["1","2","3","4","5","6","7"]}"#;
        assert_eq!(
            parse_external_candidates(seven, 5, origin).unwrap()["a"].variants,
            vec!["1", "2", "3", "4", "5"]
        );

        let missing = r#"{"variants":["1"]}"#;
        assert!(parse_external_candidates(missing, 1, origin).is_err());
    }

    fn sentence() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(
            prop::sample::select(vec!["good", "morning", "a", "b", "c"]),
            1..12,
        )
        .prop_map(|v| v.into_iter().map(str::to_owned).collect())
    }

    proptest! {
        #[test]
        fn length_invariants(s in sentence(), alpha in 0.0f64..=1.0, seed in any::<u64>()) {
            let l = lex();
            for op in EdaOperation::ALL {
                let cfg = config(&[op], alpha);
                let n = cfg.positions(s.len());
                let mut rng = rng::from_seed(seed);
                for v in eda_augment(&s, &cfg, &l, &mut rng).unwrap() {
                    prop_assert!(!v.tokens.is_empty());
                    match op {
                        EdaOperation::SynonymReplacement | EdaOperation::RandomSwap => {
                            prop_assert_eq!(v.tokens.len(), s.len())
                        }
                        EdaOperation::RandomInsertion => prop_assert_eq!(v.tokens.len(), s.len() + n),
                        EdaOperation::RandomDeletion => {
                            prop_assert!(v.tokens.len() + n >= s.len());
                            prop_assert!(v.tokens.len() < s.len() || s.len() == 1);
                        }
                    }
                    prop_assert_eq!(v.unchanged, v.tokens == s);
                }
            }
        }

        #[test]
        fn deterministic(s in sentence(), seed in any::<u64>()) {
            let cfg = EdaConfig::default();
            let a = eda_augment(&s, &cfg, &lex(), &mut rng::from_seed(seed)).unwrap();
            let b = eda_augment(&s, &cfg, &lex(), &mut rng::from_seed(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
