//! Correlation of model scores against human judgment datasets.
//!
//! Two dataset shapes are supported:
//!
//! * **Phrase similarity** (CSV): pairs of two-word phrases rated by
//!   annotators. The model scores a pair by the cosine of the two composed
//!   vectors. Correlation is computed per annotator over that annotator's
//!   items and then averaged, so no annotator dominates.
//! * **Phrase compositionality** (JSON lines): phrases with per-annotator
//!   ratings in `[0, 5]` and attested sentence occurrences. The model
//!   scores a phrase either type-level (interpolated constituent similarity)
//!   or token-level (context log-likelihood aggregated over the phrase's
//!   sentences). Ratings are pooled by averaging per phrase and a single
//!   correlation is computed over phrases.
//!
//! Records the model cannot score (out-of-vocabulary words, no scorable
//! context) are dropped and counted, never silently ignored: used, excluded,
//! and dropped records always add up to the dataset size.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composition::{CoarseTag, CompositionModel, TaggedWord};
use crate::embeddings::{cosine, EmbeddingTable};
use crate::scoring::{
    score_occurrence, score_type_level, ScoreError, Summary, TokenScoreConfig,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("record {index}: {msg}")]
    InvalidRecord { index: usize, msg: String },
    #[error("input lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("correlation needs at least 3 points, got {found}")]
    TooFewPoints { found: usize },
    #[error("non-finite value in correlation input")]
    NonFiniteInput,
    #[error("correlation is undefined: an input is constant")]
    ConstantInput,
    #[error("no annotator has enough scorable items")]
    NoUsableAnnotators,
    #[error("token-level evaluation needs a context table")]
    MissingContextTable,
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// Fractional (average) ranks, 1-based: ties share the mean of the ranks
/// they occupy.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        values[i]
            .partial_cmp(&values[j])
            .expect("rank inputs must be finite")
    });
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation coefficient, clamped to `[-1, 1]`.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a < 1e-12 || var_b < 1e-12 {
        return Err(EvalError::ConstantInput);
    }
    Ok((cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson over fractional ranks, so ties are
/// handled exactly.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    check_pair(a, b)?;
    pearson_r(&fractional_ranks(a), &fractional_ranks(b))
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 3 {
        return Err(EvalError::TooFewPoints { found: a.len() });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFiniteInput);
    }
    Ok(())
}

/// One similarity judgment: an annotator's score for a pair of two-word
/// phrases.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRecord {
    pub annotator: String,
    pub phrase_a: Vec<TaggedWord>,
    pub phrase_b: Vec<TaggedWord>,
    pub score: f64,
}

/// One compositionality item: a phrase, its annotator ratings, and its
/// attested sentence occurrences.
#[derive(Debug, Clone, PartialEq)]
pub struct CompRecord {
    pub phrase: Vec<TaggedWord>,
    pub annotator_scores: Vec<f64>,
    pub sentences: Vec<CompSentence>,
}

/// A sentence containing the phrase at `span` (token indices, end
/// exclusive).
#[derive(Debug, Clone, PartialEq)]
pub struct CompSentence {
    pub tokens: Vec<TaggedWord>,
    pub span: (usize, usize),
}

#[derive(Deserialize)]
struct SimRow {
    annotator: String,
    phrase_a: String,
    tags_a: String,
    phrase_b: String,
    tags_b: String,
    score: f64,
}

/// Loads the similarity CSV
/// (`annotator,phrase_a,tags_a,phrase_b,tags_b,score`).
pub fn load_similarity_csv(path: impl AsRef<Path>) -> Result<Vec<SimilarityRecord>, EvalError> {
    read_similarity_csv(File::open(path)?)
}

/// See [`load_similarity_csv`].
pub fn read_similarity_csv<R: std::io::Read>(
    reader: R,
) -> Result<Vec<SimilarityRecord>, EvalError> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let mut records = Vec::new();
    for (i, row) in csv_reader.deserialize::<SimRow>().enumerate() {
        let index = i + 1;
        let row = row?;
        let phrase_a = tagged_phrase(&row.phrase_a, &row.tags_a, index)?;
        let phrase_b = tagged_phrase(&row.phrase_b, &row.tags_b, index)?;
        if phrase_a.len() != 2 || phrase_b.len() != 2 {
            return Err(EvalError::InvalidRecord {
                index,
                msg: "similarity phrases must have exactly two words".to_string(),
            });
        }
        if !row.score.is_finite() {
            return Err(EvalError::InvalidRecord {
                index,
                msg: "score is not finite".to_string(),
            });
        }
        if row.annotator.trim().is_empty() {
            return Err(EvalError::InvalidRecord {
                index,
                msg: "empty annotator id".to_string(),
            });
        }
        records.push(SimilarityRecord {
            annotator: row.annotator,
            phrase_a,
            phrase_b,
            score: row.score,
        });
    }
    Ok(records)
}

fn tagged_phrase(words: &str, tags: &str, index: usize) -> Result<Vec<TaggedWord>, EvalError> {
    let words: Vec<&str> = words.split_whitespace().collect();
    let tags: Vec<&str> = tags.split_whitespace().collect();
    if words.len() != tags.len() || words.is_empty() {
        return Err(EvalError::InvalidRecord {
            index,
            msg: format!("{} word(s) but {} tag(s)", words.len(), tags.len()),
        });
    }
    Ok(words
        .iter()
        .zip(tags.iter())
        .map(|(w, t)| TaggedWord::new(*w, CoarseTag::from_penn(t)))
        .collect())
}

#[derive(Deserialize)]
struct CompRow {
    phrase: String,
    tags: Vec<String>,
    annotator_scores: Vec<f64>,
    sentences: Vec<SentenceRow>,
}

#[derive(Deserialize)]
struct SentenceRow {
    tokens: Vec<String>,
    span: (usize, usize),
}

/// Loads the compositionality dataset: one JSON object per line with
/// `phrase`, `tags`, `annotator_scores` (each in `[0, 5]`), and `sentences`
/// (`word_TAG` tokens plus the phrase span).
pub fn load_compositionality_jsonl(
    path: impl AsRef<Path>,
) -> Result<Vec<CompRecord>, EvalError> {
    read_compositionality_jsonl(BufReader::new(File::open(path)?))
}

/// See [`load_compositionality_jsonl`].
pub fn read_compositionality_jsonl<R: BufRead>(reader: R) -> Result<Vec<CompRecord>, EvalError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let index = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: CompRow = serde_json::from_str(&line).map_err(|e| EvalError::InvalidRecord {
            index,
            msg: e.to_string(),
        })?;
        let words: Vec<&str> = row.phrase.split_whitespace().collect();
        if words.len() < 2 {
            return Err(EvalError::InvalidRecord {
                index,
                msg: "phrase must have at least two words".to_string(),
            });
        }
        if words.len() != row.tags.len() {
            return Err(EvalError::InvalidRecord {
                index,
                msg: format!("{} word(s) but {} tag(s)", words.len(), row.tags.len()),
            });
        }
        let phrase: Vec<TaggedWord> = words
            .iter()
            .zip(row.tags.iter())
            .map(|(w, t)| TaggedWord::new(*w, CoarseTag::from_penn(t)))
            .collect();
        if row.annotator_scores.is_empty() {
            return Err(EvalError::InvalidRecord {
                index,
                msg: "no annotator scores".to_string(),
            });
        }
        if row
            .annotator_scores
            .iter()
            .any(|s| !s.is_finite() || !(0.0..=5.0).contains(s))
        {
            return Err(EvalError::InvalidRecord {
                index,
                msg: "annotator scores must be finite and in [0, 5]".to_string(),
            });
        }
        let mut sentences = Vec::with_capacity(row.sentences.len());
        for sent in row.sentences {
            let tokens: Vec<TaggedWord> = sent
                .tokens
                .iter()
                .map(|t| TaggedWord::parse(t))
                .collect::<Result<_, _>>()
                .map_err(|e| EvalError::InvalidRecord {
                    index,
                    msg: e.to_string(),
                })?;
            let (start, end) = sent.span;
            if start >= end || end > tokens.len() || end - start != phrase.len() {
                return Err(EvalError::InvalidRecord {
                    index,
                    msg: format!(
                        "span {start}..{end} does not cover a {}-word phrase in {} tokens",
                        phrase.len(),
                        tokens.len()
                    ),
                });
            }
            let span_words: Vec<&str> =
                tokens[start..end].iter().map(|t| t.word.as_str()).collect();
            if span_words != words {
                return Err(EvalError::InvalidRecord {
                    index,
                    msg: format!("span covers {span_words:?}, not the phrase {words:?}"),
                });
            }
            sentences.push(CompSentence {
                tokens,
                span: sent.span,
            });
        }
        records.push(CompRecord {
            phrase,
            annotator_scores: row.annotator_scores,
            sentences,
        });
    }
    Ok(records)
}

/// How [`eval_compositionality`] scores a phrase.
#[derive(Debug, Clone)]
pub enum CompScoreMode {
    /// Type-level interpolated constituent similarity.
    Type { alpha: f64 },
    /// Token-level mean context log-likelihood per occurrence, aggregated
    /// over the phrase's sentences. (The log-likelihood orientation —
    /// higher is more compositional — is used regardless of any display
    /// summary.)
    Token { window: usize, aggregate: Aggregate },
}

/// How per-occurrence scores combine into one phrase score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Mean,
    Max,
}

impl std::str::FromStr for Aggregate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Aggregate::Mean),
            "max" => Ok(Aggregate::Max),
            other => Err(format!("unknown aggregate {other:?} (expected mean or max)")),
        }
    }
}

/// Correlation outcome with full record accounting.
#[derive(Debug, Clone, Serialize)]
pub struct CorrelationReport {
    /// Spearman correlation (for similarity: mean over annotators).
    pub rho: f64,
    /// "per-annotator-mean" or "pooled".
    pub aggregation: String,
    /// Records that entered the correlation.
    pub n_used: usize,
    /// Records in the dataset.
    pub n_total: usize,
    /// Records the model could not score (out of vocabulary, degenerate
    /// vector, or no scorable context).
    pub n_dropped: usize,
    /// Records belonging to excluded annotators.
    pub n_excluded_records: usize,
    /// Annotators excluded for having fewer than 3 scorable items (or
    /// constant scores).
    pub excluded_annotators: Vec<String>,
    /// Per-annotator correlations, when aggregation is per annotator.
    pub per_annotator: Option<BTreeMap<String, f64>>,
}

/// Correlates model phrase-pair similarities with per-annotator human
/// scores.
///
/// Each annotator's Spearman correlation is computed over their scorable
/// items and the report's `rho` is the mean across annotators. Annotators
/// with fewer than 3 scorable items (or constant scores) are excluded by
/// name.
pub fn eval_similarity(
    model: &CompositionModel,
    records: &[SimilarityRecord],
    words: &EmbeddingTable,
) -> Result<CorrelationReport, EvalError> {
    let mut by_annotator: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    let mut n_dropped = 0;
    for record in records {
        let pair_score = (|| -> Result<f64, ScoreError> {
            let za = model.compose_tokens(&record.phrase_a, words)?;
            let zb = model.compose_tokens(&record.phrase_b, words)?;
            Ok(cosine(za.view(), zb.view())?)
        })();
        match pair_score {
            Ok(model_score) => by_annotator
                .entry(&record.annotator)
                .or_default()
                .push((record.score, model_score)),
            Err(_) => n_dropped += 1,
        }
    }

    let mut per_annotator = BTreeMap::new();
    let mut excluded_annotators = Vec::new();
    let mut n_excluded_records = 0;
    let mut n_used = 0;
    for (annotator, items) in &by_annotator {
        let human: Vec<f64> = items.iter().map(|(h, _)| *h).collect();
        let model_scores: Vec<f64> = items.iter().map(|(_, m)| *m).collect();
        match spearman_rho(&human, &model_scores) {
            Ok(rho) => {
                per_annotator.insert(annotator.to_string(), rho);
                n_used += items.len();
            }
            Err(EvalError::TooFewPoints { .. }) | Err(EvalError::ConstantInput) => {
                excluded_annotators.push(annotator.to_string());
                n_excluded_records += items.len();
            }
            Err(other) => return Err(other),
        }
    }
    if per_annotator.is_empty() {
        return Err(EvalError::NoUsableAnnotators);
    }
    let rho = per_annotator.values().sum::<f64>() / per_annotator.len() as f64;
    Ok(CorrelationReport {
        rho,
        aggregation: "per-annotator-mean".to_string(),
        n_used,
        n_total: records.len(),
        n_dropped,
        n_excluded_records,
        excluded_annotators,
        per_annotator: Some(per_annotator),
    })
}

/// Correlates model compositionality scores with pooled (per-phrase
/// averaged) human ratings.
pub fn eval_compositionality(
    model: &CompositionModel,
    records: &[CompRecord],
    words: &EmbeddingTable,
    contexts: Option<&EmbeddingTable>,
    mode: &CompScoreMode,
) -> Result<CorrelationReport, EvalError> {
    // Validate configuration up front so a bad alpha or window fails loudly
    // instead of silently dropping every record.
    let token_cfg = match mode {
        CompScoreMode::Type { alpha } => {
            if !(0.0..=1.0).contains(alpha) || !alpha.is_finite() {
                return Err(EvalError::Score(ScoreError::BadAlpha(*alpha)));
            }
            None
        }
        CompScoreMode::Token { window, .. } => {
            if *window < 2 {
                return Err(EvalError::Score(ScoreError::BadWindow(*window)));
            }
            if contexts.is_none() {
                return Err(EvalError::MissingContextTable);
            }
            Some(TokenScoreConfig {
                window: *window,
                summary: Summary::MeanLogLikelihood,
            })
        }
    };

    let mut human = Vec::new();
    let mut predicted = Vec::new();
    let mut n_dropped = 0;
    for record in records {
        let mean_rating =
            record.annotator_scores.iter().sum::<f64>() / record.annotator_scores.len() as f64;
        let model_score = match mode {
            CompScoreMode::Type { alpha } => {
                score_type_level(model, &record.phrase, *alpha, words).ok()
            }
            CompScoreMode::Token { aggregate, .. } => {
                let contexts = contexts.expect("checked above");
                let cfg = token_cfg.as_ref().expect("checked above");
                let mut occurrence_scores = Vec::new();
                for sentence in &record.sentences {
                    if let Ok(scored) = score_occurrence(
                        model,
                        &sentence.tokens,
                        sentence.span,
                        words,
                        contexts,
                        cfg,
                    ) {
                        occurrence_scores.push(scored.mean_log_likelihood);
                    }
                }
                if occurrence_scores.is_empty() {
                    None
                } else {
                    Some(match aggregate {
                        Aggregate::Mean => {
                            occurrence_scores.iter().sum::<f64>()
                                / occurrence_scores.len() as f64
                        }
                        Aggregate::Max => occurrence_scores
                            .iter()
                            .fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
                    })
                }
            }
        };
        match model_score {
            Some(score) => {
                human.push(mean_rating);
                predicted.push(score);
            }
            None => n_dropped += 1,
        }
    }

    let rho = spearman_rho(&human, &predicted)?;
    Ok(CorrelationReport {
        rho,
        aggregation: "pooled".to_string(),
        n_used: human.len(),
        n_total: records.len(),
        n_dropped,
        n_excluded_records: 0,
        excluded_annotators: Vec::new(),
        per_annotator: None,
    })
}
