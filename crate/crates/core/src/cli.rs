//! The `dialeval` command line.
//!
//! Every table is written as TSV with a header row, structured records as
//! JSONL. Output is assembled in memory and written in one go, so a
//! non-zero exit never leaves a partial file behind.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::augmentor::{
    augment_pair, load_external_candidates, EdaConfig, EdaOperation, SynonymLexicon,
};
use crate::config::PoneConfig;
use crate::corpus::{
    average_human_scores, load_annotations, load_pairs, Aspect, DialoguePair, PairFormat,
};
use crate::embedding_metrics::{
    bertscore_f1, embedding_average, greedy_matching, vector_extrema, EmbeddingMetric,
};
use crate::embeddings::{load_word_vectors, EmbeddingTable, Encoder, PrecomputedEmbeddingStore};
use crate::error::Error;
use crate::label_filter::write_trace_jsonl;
use crate::negative_sampler::{NegativeSampler, NegativeStrategy, SamplerConfig};
use crate::overlap_metrics::{self, OverlapMetric, Smoothing};
use crate::pipeline::{fit, score_pairs, AugmentSource, Mode};
use crate::scorer::ScorerModel;
use crate::stats::{fleiss_kappa, human_agreement, permutation_p_value, Correlation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "dialeval",
    version,
    about = "Dialogue response evaluation metrics"
)]
pub struct Cli {
    /// Seed for every random decision.
    #[arg(long, global = true, env = "DIALEVAL_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score responses against references with an overlap or embedding metric.
    EvalReference(EvalReferenceArgs),
    /// Train or apply the learned PONE scorer.
    #[command(subcommand)]
    Pone(PoneCommand),
    /// Correlate two score files (or scores against human ratings).
    Correlate(CorrelateArgs),
    /// Inter-annotator agreement.
    Kappa(KappaArgs),
    /// Produce augmented positives.
    #[command(subcommand)]
    Augment(AugmentCommand),
    /// Draw negatives for every pair and emit them as JSONL.
    SampleNegatives(SampleNegativesArgs),
}

#[derive(Debug, Args)]
pub struct EmbeddingArgs {
    /// Static word vectors (GloVe/word2vec text format).
    #[arg(long)]
    pub emb: Option<PathBuf>,
    /// Precomputed embedding store (JSONL).
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalReferenceArgs {
    /// bleu1..4, rouge, meteor, ea, vx, gm or bertscore.
    #[arg(long)]
    pub metric: String,
    /// Candidate responses.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Reference responses, matched by pair id.
    #[arg(long)]
    pub refs: PathBuf,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    /// Store holding reference token matrices for bertscore.
    #[arg(long)]
    pub ref_store: Option<PathBuf>,
    /// Synonym lexicon for METEOR's synonym stage.
    #[arg(long)]
    pub synonyms: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum PoneCommand {
    Train(PoneTrainArgs),
    Score(PoneScoreArgs),
}

#[derive(Debug, Args)]
pub struct PoneTrainArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    /// key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// full, po-lf, ne-lf or ne.
    #[arg(long, default_value = "full")]
    pub mode: String,
    /// Synonym lexicon for EDA.
    #[arg(long)]
    pub synonyms: Option<PathBuf>,
    /// Pre-generated augmentation candidates (JSONL) used instead of EDA.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PoneScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Metric scores (TSV; pair id first, score last).
    #[arg(long)]
    pub x: PathBuf,
    /// Second score file.
    #[arg(long, conflicts_with = "human")]
    pub y: Option<PathBuf>,
    /// Annotation TSV; scores are the per-pair normalized mean.
    #[arg(long)]
    pub human: Option<PathBuf>,
    #[arg(long, default_value = "overall")]
    pub aspect: String,
    #[arg(long, default_value_t = 1000)]
    pub perms: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KappaArgs {
    /// Annotation TSV: pair_id, annotator_id, aspect, raw_score.
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value = "overall")]
    pub aspect: String,
    /// Also report Human-Avg/Max pairwise correlations.
    #[arg(long)]
    pub human: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AugmentCommand {
    Eda(AugmentEdaArgs),
    Import(AugmentImportArgs),
}

#[derive(Debug, Args)]
pub struct AugmentEdaArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long)]
    pub synonyms: Option<PathBuf>,
    /// Comma-separated operations (sr, ri, rs, rd).
    #[arg(long)]
    pub ops: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentImportArgs {
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleNegativesArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[command(flatten)]
    pub embeddings: EmbeddingArgs,
    #[arg(long, default_value_t = 0.07)]
    pub t: f64,
    #[arg(long, default_value_t = 128)]
    pub h: usize,
    /// Negatives per pair.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// Independent draws per pair.
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
    /// Sample uniformly from the pool instead of by similarity.
    #[arg(long)]
    pub uniform: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage_err(e: Error) -> Failure {
    Failure::usage(e.to_string())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::EvalReference(a) => eval_reference(a),
        Command::Pone(PoneCommand::Train(a)) => pone_train(a, seed),
        Command::Pone(PoneCommand::Score(a)) => pone_score(a),
        Command::Correlate(a) => correlate(a, seed),
        Command::Kappa(a) => kappa(a),
        Command::Augment(AugmentCommand::Eda(a)) => augment_eda(a, seed),
        Command::Augment(AugmentCommand::Import(a)) => augment_import(a),
        Command::SampleNegatives(a) => sample_negatives(a, seed),
    }
}

fn emit(out: Option<&Path>, body: &str) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, body).map_err(|e| Error::io(path, e).into()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(body.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(|e| Failure {
                    code: EXIT_FAILURE,
                    message: format!("writing stdout: {e}"),
                })
        }
    }
}

fn read_pairs(path: &Path) -> CliResult<Vec<DialoguePair>> {
    Ok(load_pairs(path, PairFormat::from_path(path))?)
}

fn load_store(path: &Path) -> CliResult<PrecomputedEmbeddingStore> {
    let store = PrecomputedEmbeddingStore::load(path)?;
    for w in store.warnings() {
        log::warn!("{}: {w}", path.display());
    }
    Ok(store)
}

fn load_encoder(args: &EmbeddingArgs) -> CliResult<Encoder> {
    if args.emb.is_none() && args.store.is_none() {
        return Err(Failure::usage(
            "an embedding source is required: pass --emb or --store",
        ));
    }
    let table = args.emb.as_deref().map(load_word_vectors).transpose()?;
    let store = args.store.as_deref().map(load_store).transpose()?;
    if let (Some(t), Some(s)) = (&table, &store) {
        if t.dim() != s.dim() {
            return Err(Failure::usage(format!(
                "word vectors have dim {} but the store has dim {}",
                t.dim(),
                s.dim()
            )));
        }
    }
    Ok(Encoder { table, store })
}

fn load_lexicon(path: Option<&Path>) -> CliResult<SynonymLexicon> {
    Ok(path
        .map(SynonymLexicon::load)
        .transpose()?
        .unwrap_or_default())
}

fn eval_reference(a: EvalReferenceArgs) -> CliResult<()> {
    enum Kind {
        Overlap(OverlapMetric),
        Embedding(EmbeddingMetric),
    }
    let kind = match a.metric.parse::<OverlapMetric>() {
        Ok(m) => Kind::Overlap(m),
        Err(_) => Kind::Embedding(a.metric.parse::<EmbeddingMetric>().map_err(usage_err)?),
    };
    let candidates = read_pairs(&a.pairs)?;
    let references = read_pairs(&a.refs)?;
    let refs: HashMap<&str, &DialoguePair> =
        references.iter().map(|p| (p.id.as_str(), p)).collect();
    let lexicon = match kind {
        Kind::Overlap(OverlapMetric::Meteor) => Some(load_lexicon(a.synonyms.as_deref())?),
        _ => None,
    };

    let table: Option<EmbeddingTable> = match kind {
        Kind::Embedding(m) => {
            let static_bertscore = m == EmbeddingMetric::BertScore && a.embeddings.store.is_none();
            if (m != EmbeddingMetric::BertScore || static_bertscore) && a.embeddings.emb.is_none() {
                return Err(Failure::usage(format!("metric `{}` needs --emb", a.metric)));
            }
            a.embeddings
                .emb
                .as_deref()
                .map(load_word_vectors)
                .transpose()?
        }
        Kind::Overlap(_) => None,
    };
    let (cand_store, ref_store) = match kind {
        Kind::Embedding(EmbeddingMetric::BertScore) if a.embeddings.store.is_some() => {
            let cand = load_store(a.embeddings.store.as_deref().unwrap_or(Path::new("")))?;
            let rs = match &a.ref_store {
                Some(p) => load_store(p)?,
                None => cand.clone(),
            };
            (Some(cand), Some(rs))
        }
        _ => (None, None),
    };

    let metric_name = match kind {
        Kind::Overlap(m) => m.to_string(),
        Kind::Embedding(EmbeddingMetric::BertScore) if cand_store.is_none() => {
            "bertscore_static".to_owned()
        }
        Kind::Embedding(m) => m.to_string(),
    };

    let mut body = String::from("pair_id\tmetric\tvalue\n");
    for pair in &candidates {
        let reference = refs
            .get(pair.id.as_str())
            .ok_or_else(|| Error::invalid(format!("no reference for pair `{}`", pair.id)))?;
        let c = pair.response_tokens();
        let r = reference.response_tokens();
        let value = match kind {
            Kind::Overlap(m) => {
                overlap_metrics::score(m, &c, &r, Smoothing::default(), lexicon.as_ref())?.value
            }
            Kind::Embedding(m) => {
                if let (Some(cs), Some(rs)) = (&cand_store, &ref_store) {
                    let key = PrecomputedEmbeddingStore::key(&pair.id, "response");
                    let cm = cs.token_matrix(&key).ok_or_else(|| {
                        Error::MissingEmbedding(format!("token matrix for {key}"))
                    })?;
                    let rm = rs.token_matrix(&key).ok_or_else(|| {
                        Error::MissingEmbedding(format!("reference token matrix for {key}"))
                    })?;
                    bertscore_f1(&cm.rows, &rm.rows)?
                } else {
                    let t = table
                        .as_ref()
                        .ok_or_else(|| Failure::usage("--emb required"))?;
                    match m {
                        EmbeddingMetric::EmbeddingAverage => embedding_average(&c, &r, t)?,
                        EmbeddingMetric::VectorExtrema => vector_extrema(&c, &r, t)?,
                        EmbeddingMetric::GreedyMatching => greedy_matching(&c, &r, t)?,
                        EmbeddingMetric::BertScore => {
                            bertscore_f1(&t.token_matrix(&c), &t.token_matrix(&r))?
                        }
                    }
                }
            }
        };
        let _ = writeln!(body, "{}\t{metric_name}\t{value}", pair.id);
    }
    emit(a.out.as_deref(), &body)
}

fn pone_train(a: PoneTrainArgs, seed: u64) -> CliResult<()> {
    let mode: Mode = a.mode.parse().map_err(usage_err)?;
    let config = match &a.config {
        Some(p) => PoneConfig::load(p).map_err(usage_err)?,
        None => PoneConfig::default(),
    }
    .with_seed(seed);
    let pairs = read_pairs(&a.pairs)?;
    let encoder = load_encoder(&a.embeddings)?;
    let lexicon = load_lexicon(a.synonyms.as_deref())?;
    let candidates = a
        .candidates
        .as_deref()
        .map(|p| load_external_candidates(p, config.eda.k))
        .transpose()?;
    let source = match &candidates {
        Some(c) => AugmentSource::External(c),
        None => AugmentSource::Eda(&lexicon),
    };

    let outcome = fit(&pairs, &encoder, source, mode, &config)?;

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    outcome
        .model
        .save(a.out.join("model.json"), Some(&config.train))?;
    if mode.weighted_negatives() {
        let mut body = String::new();
        for n in &outcome.negatives {
            body.push_str(&serde_json::to_string(n).map_err(Error::from)?);
            body.push('\n');
        }
        let path = a.out.join("negatives.jsonl");
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    if mode.augmentation() {
        let mut body = String::new();
        for s in &outcome.augmented {
            body.push_str(&serde_json::to_string(s).map_err(Error::from)?);
            body.push('\n');
        }
        let path = a.out.join("augmented.jsonl");
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    if let Some(state) = &outcome.pseudo_labels {
        write_trace_jsonl(a.out.join("filter_trace.jsonl"), &outcome.filter_trace)?;
        let mut body = String::from("sample_id\tlabel\n");
        for (id, label) in &state.labels {
            let _ = writeln!(body, "{id}\t{label}");
        }
        let path = a.out.join("pseudo_labels.tsv");
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn pone_score(a: PoneScoreArgs) -> CliResult<()> {
    let model = ScorerModel::load(&a.model)
        .map_err(|e| Failure::usage(format!("cannot load model: {e}")))?;
    let encoder = load_encoder(&a.embeddings)?;
    if let Some(dim) = encoder.dim() {
        if dim != model.dim {
            return Err(Failure::usage(format!(
                "model expects {}-dimensional embeddings, got {dim}",
                model.dim
            )));
        }
    }
    let pairs = read_pairs(&a.pairs)?;
    let scores = score_pairs(&model, &pairs, &encoder).map_err(|e| match e {
        Error::DimensionMismatch { .. } => usage_err(e),
        other => other.into(),
    })?;
    let mut body = String::from("pair_id\tscore\n");
    for (p, s) in pairs.iter().zip(scores) {
        let _ = writeln!(body, "{}\t{s}", p.id);
    }
    emit(a.out.as_deref(), &body)
}

/// Reads `pair_id ... score` rows: the first column is the id, the last the
/// value. A first line whose value does not parse is taken as a header.
pub fn read_scores(path: &Path) -> std::result::Result<Vec<(String, f64)>, Error> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let (id, raw) = match (cols.first(), cols.last()) {
            (Some(id), Some(raw)) if cols.len() >= 2 => (*id, *raw),
            _ => {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    "expected at least 2 tab-separated columns",
                ))
            }
        };
        match raw.trim().parse::<f64>() {
            Ok(v) => out.push((id.to_owned(), v)),
            Err(_) if idx == 0 => continue,
            Err(_) => return Err(Error::parse(path, idx + 1, format!("bad score `{raw}`"))),
        }
    }
    Ok(out)
}

fn correlate(a: CorrelateArgs, seed: u64) -> CliResult<()> {
    let x = read_scores(&a.x)?;
    let y: BTreeMap<String, f64> = match (&a.y, &a.human) {
        (Some(p), None) => read_scores(p)?.into_iter().collect(),
        (None, Some(p)) => {
            let aspect: Aspect = a.aspect.parse().map_err(usage_err)?;
            average_human_scores(&load_annotations(p)?, aspect)
        }
        _ => return Err(Failure::usage("pass exactly one of --y or --human")),
    };
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .filter_map(|(id, v)| y.get(id).map(|w| (*v, *w)))
        .unzip();
    let mut body = String::from("statistic\tvalue\tp\tn\n");
    for stat in [Correlation::Pearson, Correlation::Spearman] {
        let value = stat.compute(&xs, &ys)?;
        let p = permutation_p_value(&xs, &ys, stat, a.perms, seed).map_err(|e| match e {
            Error::InvalidInput(m) if m.contains("permutations") => Failure::usage(m),
            other => other.into(),
        })?;
        let _ = writeln!(body, "{stat}\t{value}\t{p}\t{}", xs.len());
    }
    emit(a.out.as_deref(), &body)
}

fn kappa(a: KappaArgs) -> CliResult<()> {
    let aspect: Aspect = a.aspect.parse().map_err(usage_err)?;
    let sets = load_annotations(&a.annotations)?;
    let mut body = String::from("statistic\tvalue\n");
    let _ = writeln!(body, "fleiss_kappa\t{}", fleiss_kappa(&sets, aspect)?);
    if a.human {
        for stat in [Correlation::Pearson, Correlation::Spearman] {
            let agr = human_agreement(&sets, aspect, stat)?;
            let _ = writeln!(body, "human_avg_{stat}\t{}", agr.avg);
            let _ = writeln!(body, "human_max_{stat}\t{}", agr.max);
        }
    }
    emit(a.out.as_deref(), &body)
}

fn augment_eda(a: AugmentEdaArgs, seed: u64) -> CliResult<()> {
    let operations = match &a.ops {
        Some(s) => s
            .split(',')
            .map(|op| op.parse::<EdaOperation>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(usage_err)?,
        None => EdaOperation::ALL.to_vec(),
    };
    let config = EdaConfig {
        k: a.k,
        alpha: a.alpha,
        operations,
        seed,
    };
    config.validate().map_err(usage_err)?;
    let lexicon = load_lexicon(a.synonyms.as_deref())?;
    let pairs = read_pairs(&a.input)?;
    let mut body = String::new();
    for pair in &pairs {
        let set = augment_pair(pair, &config, &lexicon)?;
        body.push_str(&serde_json::to_string(&set).map_err(Error::from)?);
        body.push('\n');
    }
    emit(a.out.as_deref(), &body)
}

fn augment_import(a: AugmentImportArgs) -> CliResult<()> {
    let sets = load_external_candidates(&a.candidates, a.k)?;
    let mut body = String::new();
    for set in sets.values() {
        body.push_str(&serde_json::to_string(set).map_err(Error::from)?);
        body.push('\n');
    }
    emit(a.out.as_deref(), &body)
}

fn sample_negatives(a: SampleNegativesArgs, seed: u64) -> CliResult<()> {
    let config = SamplerConfig {
        pool_size: a.h,
        temperature: a.t,
        negatives_per_positive: a.n,
        seed,
    };
    config.validate().map_err(usage_err)?;
    let strategy = if a.uniform {
        NegativeStrategy::Uniform
    } else {
        NegativeStrategy::Weighted
    };
    let pairs = read_pairs(&a.pairs)?;
    let encoder = load_encoder(&a.embeddings)?;
    let sampler = NegativeSampler::new(&pairs, &encoder)?;
    let mut body = String::new();
    for i in 0..pairs.len() {
        for repeat in 0..a.repeats {
            for s in sampler.sample(i, &config, strategy, repeat)? {
                body.push_str(&serde_json::to_string(&s).map_err(Error::from)?);
                body.push('\n');
            }
        }
    }
    emit(a.out.as_deref(), &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from([
            "dialeval", "--seed", "4", "pone", "train", "--pairs", "p.jsonl", "--emb", "v.txt",
            "--out", "o",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(4));
        assert!(matches!(cli.command, Command::Pone(PoneCommand::Train(_))));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(main_with_args(["dialeval", "bogus"]), EXIT_USAGE);
        assert_eq!(main_with_args(["dialeval", "correlate"]), EXIT_USAGE);
    }

    #[test]
    fn score_file_header_is_optional() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.tsv");
        fs::write(&p, "pair_id\tmetric\tvalue\na\tbleu1\t0.5\nb\tbleu1\t1\n").unwrap();
        assert_eq!(
            read_scores(&p).unwrap(),
            vec![("a".into(), 0.5), ("b".into(), 1.0)]
        );
        fs::write(&p, "a\t0.5\nb\tx\n").unwrap();
        assert!(read_scores(&p).is_err());
    }
}
