//! Compositionality features for translation grammar rules.
//!
//! Rules come in the pipe-separated format
//! `LHS ||| source ||| target ||| features`. The source side mixes terminal
//! words with bracketed nonterminals like `[X]`. Every maximal contiguous
//! run of at least two terminals is a candidate phrase: the run's words are
//! tagged through a lexicon (unknown words count as `OTHER`), composed, and
//! scored. The rule's feature is the minimum over its scorable runs — the
//! least compositional phrase is the one a translation system should be
//! most careful with.
//!
//! Annotation is append-only: the original line is written back byte for
//! byte, followed by either ` CompScore=<score> CompScored=1` or
//! ` CompUnscored=1`, so stripping the appended features recovers the input
//! exactly. Lines that do not have four ` ||| `-separated fields are passed
//! through unchanged and counted.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::composition::{CoarseTag, CompositionModel, TaggedWord};
use crate::embeddings::EmbeddingTable;
use crate::scoring::{
    score_occurrence, score_type_level, ScoreError, Summary, TokenScoreConfig,
};

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("rule does not have four ' ||| ' separated fields (found {found})")]
    MalformedRule { found: usize },
    #[error("lexicon line {line}: expected \"word TAG\"")]
    MalformedLexicon { line: usize },
    #[error("corpus line {line}: {msg}")]
    MalformedCorpus { line: usize, msg: String },
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// One source-side token of a rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceToken {
    Terminal(String),
    NonTerminal(String),
}

impl SourceToken {
    fn parse(token: &str) -> Self {
        if token.len() >= 2 && token.starts_with('[') && token.ends_with(']') {
            SourceToken::NonTerminal(token.to_string())
        } else {
            SourceToken::Terminal(token.to_string())
        }
    }
}

/// A parsed grammar rule. The feature field is kept raw; annotation never
/// rewrites it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrammarRule {
    pub lhs: String,
    pub source: Vec<SourceToken>,
    pub target: Vec<String>,
    pub features_raw: String,
}

impl GrammarRule {
    /// `name=value` features from the raw feature field.
    pub fn named_features(&self) -> Vec<(&str, &str)> {
        self.features_raw
            .split_whitespace()
            .filter_map(|tok| tok.split_once('='))
            .collect()
    }

    /// Maximal contiguous terminal runs of length >= 2, in order.
    pub fn terminal_runs(&self) -> Vec<Vec<&str>> {
        let mut runs = Vec::new();
        let mut current: Vec<&str> = Vec::new();
        for token in &self.source {
            match token {
                SourceToken::Terminal(w) => current.push(w),
                SourceToken::NonTerminal(_) => {
                    if current.len() >= 2 {
                        runs.push(std::mem::take(&mut current));
                    } else {
                        current.clear();
                    }
                }
            }
        }
        if current.len() >= 2 {
            runs.push(current);
        }
        runs
    }
}

/// Parses one rule line: `LHS ||| source ||| target ||| features`.
pub fn parse_rule(line: &str) -> Result<GrammarRule, GrammarError> {
    let fields: Vec<&str> = line.split(" ||| ").collect();
    if fields.len() != 4 {
        return Err(GrammarError::MalformedRule {
            found: fields.len(),
        });
    }
    Ok(GrammarRule {
        lhs: fields[0].to_string(),
        source: fields[1].split_whitespace().map(SourceToken::parse).collect(),
        target: fields[2].split_whitespace().map(str::to_string).collect(),
        features_raw: fields[3].to_string(),
    })
}

/// Word-to-tag lookup for source terminals; words missing from the lexicon
/// tag as `OTHER`.
#[derive(Debug, Clone, Default)]
pub struct TagLexicon {
    map: HashMap<String, CoarseTag>,
}

impl TagLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: impl Into<String>, tag: CoarseTag) {
        self.map.entry(word.into()).or_insert(tag);
    }

    /// Loads `word TAG` lines (first entry wins on duplicates).
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GrammarError> {
        Self::read(BufReader::new(File::open(path)?))
    }

    /// See [`TagLexicon::load`].
    pub fn read<R: BufRead>(reader: R) -> Result<Self, GrammarError> {
        let mut lexicon = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(word), Some(tag), None) => {
                    lexicon.insert(word, CoarseTag::from_penn(tag));
                }
                _ => return Err(GrammarError::MalformedLexicon { line: i + 1 }),
            }
        }
        Ok(lexicon)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Tag for `word`, defaulting to `OTHER`.
    pub fn tag(&self, word: &str) -> CoarseTag {
        self.map.get(word).copied().unwrap_or(CoarseTag::Other)
    }

    /// Tags a terminal run.
    pub fn tag_run(&self, words: &[&str]) -> Vec<TaggedWord> {
        words
            .iter()
            .map(|w| TaggedWord::new(*w, self.tag(w)))
            .collect()
    }
}

/// A corpus of tagged sentences for token-level annotation.
#[derive(Debug, Clone, Default)]
pub struct TokenCorpus {
    sentences: Vec<Vec<TaggedWord>>,
}

impl TokenCorpus {
    /// Loads one `word_TAG ...` sentence per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GrammarError> {
        Self::read(BufReader::new(File::open(path)?))
    }

    /// See [`TokenCorpus::load`].
    pub fn read<R: BufRead>(reader: R) -> Result<Self, GrammarError> {
        let mut sentences = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let tokens = TaggedWord::parse_sequence(&line).map_err(|e| {
                GrammarError::MalformedCorpus {
                    line: i + 1,
                    msg: e.to_string(),
                }
            })?;
            sentences.push(tokens);
        }
        Ok(sentences.into())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// All occurrences of the word sequence, as `(sentence_index, start)`.
    pub fn find_occurrences(&self, words: &[&str]) -> Vec<(usize, usize)> {
        let mut hits = Vec::new();
        if words.is_empty() {
            return hits;
        }
        for (s, sentence) in self.sentences.iter().enumerate() {
            if sentence.len() < words.len() {
                continue;
            }
            for start in 0..=sentence.len() - words.len() {
                let matches = words
                    .iter()
                    .enumerate()
                    .all(|(k, w)| sentence[start + k].word == *w);
                if matches {
                    hits.push((s, start));
                }
            }
        }
        hits
    }

    pub fn sentence(&self, index: usize) -> &[TaggedWord] {
        &self.sentences[index]
    }
}

impl From<Vec<Vec<TaggedWord>>> for TokenCorpus {
    fn from(sentences: Vec<Vec<TaggedWord>>) -> Self {
        Self { sentences }
    }
}

/// How terminal runs are scored during annotation.
#[derive(Debug, Clone)]
pub enum GrammarScorer<'a> {
    /// Context-independent interpolated constituent similarity.
    Type { alpha: f64 },
    /// Mean context log-likelihood over the run's occurrences in a corpus.
    /// Runs that never occur in the corpus are unscorable.
    Token {
        corpus: &'a TokenCorpus,
        contexts: &'a EmbeddingTable,
        window: usize,
    },
}

/// Counters from one annotation pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AnnotateStats {
    pub lines: usize,
    pub scored: usize,
    pub unscored: usize,
    pub malformed: usize,
}

/// Annotates a rule stream.
///
/// Each well-formed rule line is echoed byte for byte and suffixed with
/// ` CompScore=<min over scorable runs, 6 decimals> CompScored=1`, or with
/// ` CompUnscored=1` when no run could be scored (no runs, out-of-vocabulary
/// words, no occurrences or usable context in token mode). Malformed lines
/// are echoed unchanged and counted.
pub fn annotate_grammar<R: BufRead, W: Write>(
    input: R,
    output: &mut W,
    model: &CompositionModel,
    words: &EmbeddingTable,
    lexicon: &TagLexicon,
    scorer: &GrammarScorer<'_>,
) -> Result<AnnotateStats, GrammarError> {
    // Fail on a bad configuration before touching any line.
    match scorer {
        GrammarScorer::Type { alpha } => {
            if !(0.0..=1.0).contains(alpha) || !alpha.is_finite() {
                return Err(GrammarError::Score(ScoreError::BadAlpha(*alpha)));
            }
        }
        GrammarScorer::Token { window, .. } => {
            if *window < 2 {
                return Err(GrammarError::Score(ScoreError::BadWindow(*window)));
            }
        }
    }

    let mut stats = AnnotateStats::default();
    for line in input.lines() {
        let line = line?;
        stats.lines += 1;
        let rule = match parse_rule(&line) {
            Ok(rule) => rule,
            Err(_) => {
                stats.malformed += 1;
                writeln!(output, "{line}")?;
                continue;
            }
        };
        let mut min_score: Option<f64> = None;
        for run in rule.terminal_runs() {
            if let Some(score) = score_run(&run, model, words, lexicon, scorer) {
                min_score = Some(match min_score {
                    Some(current) => current.min(score),
                    None => score,
                });
            }
        }
        match min_score {
            Some(score) => {
                stats.scored += 1;
                writeln!(output, "{line} CompScore={score:.6} CompScored=1")?;
            }
            None => {
                stats.unscored += 1;
                writeln!(output, "{line} CompUnscored=1")?;
            }
        }
    }
    Ok(stats)
}

/// Scores one terminal run; `None` when the run is unscorable.
fn score_run(
    run: &[&str],
    model: &CompositionModel,
    words: &EmbeddingTable,
    lexicon: &TagLexicon,
    scorer: &GrammarScorer<'_>,
) -> Option<f64> {
    match scorer {
        GrammarScorer::Type { alpha } => {
            let tagged = lexicon.tag_run(run);
            score_type_level(model, &tagged, *alpha, words).ok()
        }
        GrammarScorer::Token {
            corpus,
            contexts,
            window,
        } => {
            let cfg = TokenScoreConfig {
                window: *window,
                summary: Summary::MeanLogLikelihood,
            };
            let mut scores = Vec::new();
            for (sentence_idx, start) in corpus.find_occurrences(run) {
                let sentence = corpus.sentence(sentence_idx);
                let span = (start, start + run.len());
                if let Ok(scored) =
                    score_occurrence(model, sentence, span, words, contexts, &cfg)
                {
                    scores.push(scored.mean_log_likelihood);
                }
            }
            if scores.is_empty() {
                None
            } else {
                Some(scores.iter().sum::<f64>() / scores.len() as f64)
            }
        }
    }
}
