//! Dialogue pairs, human annotations and dataset splits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::text;

/// Where a response came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    GroundTruth,
    Generated,
    Augmented,
    Negative,
}

/// A context (one or more turns) plus a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialoguePair {
    pub id: String,
    pub context: Vec<String>,
    pub response: String,
    #[serde(default)]
    pub source: Source,
}

impl DialoguePair {
    pub fn new(id: impl Into<String>, context: Vec<String>, response: impl Into<String>) -> Self {
        DialoguePair {
            id: id.into(),
            context,
            response: response.into(),
            source: Source::GroundTruth,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.context.is_empty() {
            return Err("context has no turns".into());
        }
        if let Some(i) = self.context.iter().position(|t| t.trim().is_empty()) {
            return Err(format!("context turn {i} is empty"));
        }
        if self.response.trim().is_empty() {
            return Err("empty response".into());
        }
        Ok(())
    }

    /// Context turns tokenized and joined with the turn separator.
    pub fn context_tokens(&self) -> Vec<String> {
        text::tokenize_turns(&self.context)
    }

    pub fn response_tokens(&self) -> Vec<String> {
        text::tokenize(&self.response)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairFormat {
    Jsonl,
    Tsv,
}

impl PairFormat {
    /// `.tsv` files are TSV, everything else is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => PairFormat::Tsv,
            _ => PairFormat::Jsonl,
        }
    }
}

const TSV_TURN_SEPARATOR: &str = "|||";

#[derive(Deserialize)]
struct RawPair {
    id: String,
    context: Vec<String>,
    response: String,
    #[serde(default)]
    source: Source,
}

pub fn load_pairs(path: impl AsRef<Path>, format: PairFormat) -> Result<Vec<DialoguePair>> {
    let path = path.as_ref();
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&body, format, path)
}

pub fn parse_pairs(body: &str, format: PairFormat, origin: &Path) -> Result<Vec<DialoguePair>> {
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in body.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let pair = match format {
            PairFormat::Jsonl => {
                let raw: RawPair = serde_json::from_str(line)
                    .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
                DialoguePair {
                    id: raw.id,
                    context: raw.context,
                    response: raw.response,
                    source: raw.source,
                }
            }
            PairFormat::Tsv => {
                let cols: Vec<&str> = line.split('\t').collect();
                if lineno == 1 && cols.first() == Some(&"id") {
                    continue;
                }
                if cols.len() != 3 {
                    return Err(Error::parse(
                        origin,
                        lineno,
                        format!("expected 3 tab-separated columns, found {}", cols.len()),
                    ));
                }
                DialoguePair::new(
                    cols[0],
                    cols[1]
                        .split(TSV_TURN_SEPARATOR)
                        .map(str::to_owned)
                        .collect(),
                    cols[2],
                )
            }
        };
        pair.validate()
            .map_err(|m| Error::parse(origin, lineno, m))?;
        if !seen.insert(pair.id.clone()) {
            return Err(Error::DuplicateId(pair.id));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_pairs_jsonl(path: impl AsRef<Path>, pairs: &[DialoguePair]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for pair in pairs {
        serde_json::to_writer(&mut out, pair)?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

/// Maps a 1–6 human rating onto `[0, 1]` as `(raw - 1) / 5`.
pub fn normalize_score(raw: u8) -> Result<f64> {
    if !(1..=6).contains(&raw) {
        return Err(Error::invalid(format!("rating {raw} outside 1-6")));
    }
    Ok(f64::from(raw - 1) / 5.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Fluency,
    Coherence,
    Engagement,
    Overall,
}

impl FromStr for Aspect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fluency" => Ok(Aspect::Fluency),
            "coherence" => Ok(Aspect::Coherence),
            "engagement" => Ok(Aspect::Engagement),
            "overall" => Ok(Aspect::Overall),
            other => Err(Error::invalid(format!("unknown aspect `{other}`"))),
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aspect::Fluency => "fluency",
            Aspect::Coherence => "coherence",
            Aspect::Engagement => "engagement",
            Aspect::Overall => "overall",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rating {
    pub annotator_id: String,
    pub aspect: Aspect,
    pub raw_score: u8,
}

/// All ratings collected for one pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    pub pair_id: String,
    pub ratings: Vec<Rating>,
}

impl AnnotationSet {
    pub fn new(pair_id: impl Into<String>) -> Self {
        AnnotationSet {
            pair_id: pair_id.into(),
            ratings: Vec::new(),
        }
    }

    /// Adds a rating, enforcing the 1–6 range and one rating per
    /// `(annotator, aspect)`.
    pub fn add(
        &mut self,
        annotator_id: impl Into<String>,
        aspect: Aspect,
        raw_score: u8,
    ) -> Result<()> {
        let annotator_id = annotator_id.into();
        normalize_score(raw_score)?;
        if self
            .ratings
            .iter()
            .any(|r| r.annotator_id == annotator_id && r.aspect == aspect)
        {
            return Err(Error::invalid(format!(
                "pair `{}` already has a {aspect} rating from `{annotator_id}`",
                self.pair_id
            )));
        }
        self.ratings.push(Rating {
            annotator_id,
            aspect,
            raw_score,
        });
        Ok(())
    }

    pub fn for_aspect(&self, aspect: Aspect) -> impl Iterator<Item = &Rating> {
        self.ratings.iter().filter(move |r| r.aspect == aspect)
    }

    /// Mean normalized score over annotators, `None` if nobody rated `aspect`.
    pub fn mean_normalized(&self, aspect: Aspect) -> Option<f64> {
        let scores: Vec<f64> = self
            .for_aspect(aspect)
            .map(|r| f64::from(r.raw_score - 1) / 5.0)
            .collect();
        if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    }
}

/// Reads `pair_id  annotator_id  aspect  raw_score` rows. Sets come back in
/// first-seen pair order.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationSet>> {
    let path = path.as_ref();
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut order: Vec<AnnotationSet> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (idx, line) in body.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if lineno == 1 && cols.first() == Some(&"pair_id") {
            continue;
        }
        if cols.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                "expected 4 tab-separated columns",
            ));
        }
        let aspect: Aspect = cols[2]
            .parse()
            .map_err(|e: Error| Error::parse(path, lineno, e.to_string()))?;
        let raw: u8 = cols[3]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad rating `{}`", cols[3])))?;
        let slot = *index.entry(cols[0].to_owned()).or_insert_with(|| {
            order.push(AnnotationSet::new(cols[0]));
            order.len() - 1
        });
        order[slot]
            .add(cols[1], aspect, raw)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    }
    Ok(order)
}

/// Per-pair mean normalized scores for one aspect, keyed by pair id.
pub fn average_human_scores(sets: &[AnnotationSet], aspect: Aspect) -> BTreeMap<String, f64> {
    sets.iter()
        .filter_map(|s| s.mean_normalized(aspect).map(|m| (s.pair_id.clone(), m)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<DialoguePair>,
    pub test: Vec<DialoguePair>,
    pub valid: Vec<DialoguePair>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
    pub valid: usize,
}

pub fn split_dataset(pairs: &[DialoguePair], sizes: SplitSizes, seed: u64) -> Result<DatasetSplit> {
    let total = sizes.train + sizes.test + sizes.valid;
    if total > pairs.len() {
        return Err(Error::invalid(format!(
            "split sizes sum to {total} but the corpus has {} pairs",
            pairs.len()
        )));
    }
    let mut seen = HashSet::new();
    for p in pairs {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::DuplicateId(p.id.clone()));
        }
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng::from_seed(seed));
    let take =
        |range: std::ops::Range<usize>| order[range].iter().map(|&i| pairs[i].clone()).collect();
    Ok(DatasetSplit {
        train: take(0..sizes.train),
        test: take(sizes.train..sizes.train + sizes.test),
        valid: take(sizes.train + sizes.test..total),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(body: &str) -> Result<Vec<DialoguePair>> {
        parse_pairs(body, PairFormat::Jsonl, Path::new("mem.jsonl"))
    }

    #[test]
    fn one_line_jsonl() {
        let pairs = parse(r#"{"id":"a","context":["hi"],"response":"hello"}"#).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].context, vec!["hi"]);
        assert_eq!(pairs[0].source, Source::GroundTruth);
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn empty_response_errors_with_line() {
        let body = "{\"id\":\"a\",\"context\":[\"hi\"],\"response\":\"ok\"}\n{\"id\":\"b\",\"context\":[\"hi\"],\"response\":\"\"}";
        match parse(body) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let body = "{\"id\":\"a\",\"context\":[\"hi\"],\"response\":\"ok\"}\n\n{oops";
        match parse(body) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let body = "{\"id\":\"a\",\"context\":[\"x\"],\"response\":\"y\"}\n{\"id\":\"a\",\"context\":[\"x\"],\"response\":\"z\"}";
        assert!(matches!(parse(body), Err(Error::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn tsv_multi_turn() {
        let body = "id\tcontext\tresponse\np1\thello|||how are you\tfine thanks\n";
        let pairs = parse_pairs(body, PairFormat::Tsv, Path::new("mem.tsv")).unwrap();
        assert_eq!(pairs[0].context, vec!["hello", "how are you"]);
        assert_eq!(
            pairs[0].context_tokens(),
            vec!["hello", "<eou>", "how", "are", "you"]
        );
    }

    #[test]
    fn normalize_endpoints() {
        assert_eq!(normalize_score(1).unwrap(), 0.0);
        assert_eq!(normalize_score(6).unwrap(), 1.0);
        assert!((normalize_score(4).unwrap() - 0.6).abs() < 1e-15);
        assert!(normalize_score(0).is_err());
        assert!(normalize_score(7).is_err());
    }

    #[test]
    fn normalize_is_bijection() {
        let values: Vec<f64> = (1..=6).map(|r| normalize_score(r).unwrap()).collect();
        let expected = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        for (v, e) in values.iter().zip(expected) {
            assert!((v - e).abs() < 1e-15);
        }
        assert!(values.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn annotation_duplicates_rejected() {
        let mut set = AnnotationSet::new("p");
        set.add("a1", Aspect::Overall, 3).unwrap();
        assert!(set.add("a1", Aspect::Overall, 4).is_err());
        set.add("a1", Aspect::Fluency, 4).unwrap();
        assert!(set.add("a2", Aspect::Overall, 9).is_err());
        set.add("a2", Aspect::Overall, 6).unwrap();
        assert!((set.mean_normalized(Aspect::Overall).unwrap() - 0.7).abs() < 1e-12);
    }

    fn corpus(n: usize) -> Vec<DialoguePair> {
        (0..n)
            .map(|i| DialoguePair::new(format!("p{i}"), vec![format!("q {i}")], format!("r {i}")))
            .collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let pairs = corpus(10);
        let sizes = SplitSizes {
            train: 6,
            test: 2,
            valid: 2,
        };
        let a = split_dataset(&pairs, sizes, 7).unwrap();
        assert_eq!((a.train.len(), a.test.len(), a.valid.len()), (6, 2, 2));
        let b = split_dataset(&pairs, sizes, 7).unwrap();
        assert_eq!(a, b);
        let overflow = SplitSizes {
            train: 9,
            test: 1,
            valid: 1,
        };
        assert!(split_dataset(&pairs, overflow, 7).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions(n in 3usize..40, seed in any::<u64>(), a in 0usize..10, b in 0usize..10) {
            let pairs = corpus(n);
            let train = a.min(n);
            let test = b.min(n - train);
            let valid = (n - train - test) / 2;
            let split = split_dataset(&pairs, SplitSizes { train, test, valid }, seed).unwrap();
            let mut ids = HashSet::new();
            for p in split.train.iter().chain(&split.test).chain(&split.valid) {
                prop_assert!(ids.insert(p.id.clone()));
            }
            prop_assert_eq!(ids.len(), train + test + valid);
            let again = split_dataset(&pairs, SplitSizes { train, test, valid }, seed).unwrap();
            prop_assert_eq!(split, again);
        }
    }
}
