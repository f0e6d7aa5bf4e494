//! Type-level and token-level compositionality scores.
//!
//! * The type-level score compares a phrase's composed vector `z` with its
//!   constituent vectors: `alpha * cos(x, z) + (1 - alpha) * cos(y, z)` for
//!   a two-word phrase. A phrase whose composed vector stays close to its
//!   parts is compositional; an idiom whose parts predict little about the
//!   whole scores low.
//! * The token-level score looks at one occurrence in context: it is the
//!   mean log-likelihood of the surrounding context words under a softmax
//!   distribution `p(c | z)` proportional to `exp(z . v_c)` over the whole
//!   context vocabulary. The normalizer is computed exactly, in the context
//!   table's insertion order with a max-shift, so scores are deterministic
//!   and overflow-safe.
//!
//! Higher mean log-likelihood means the composed vector predicts the
//! observed contexts better, i.e. the occurrence is more compositional. The
//! perplexity summary `exp(-mean_ll)` flips the orientation: lower is more
//! compositional.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView1;
use thiserror::Error;

use crate::composition::{ComposeError, CompositionModel, PhraseTree, TaggedWord};
use crate::embeddings::{cosine, EmbedError, EmbeddingTable};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("alpha must be in [0, 1], got {0}")]
    BadAlpha(f64),
    #[error("window must be at least 2, got {0}")]
    BadWindow(usize),
    #[error("span {start}..{end} is not a phrase of >= 2 tokens inside a {len}-token sentence")]
    BadSpan {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("no usable context words (all outside the context vocabulary)")]
    NoScorableContext,
    #[error("context table is empty")]
    EmptyContextTable,
    #[error("vector length {found} does not match context table dimension {expected}")]
    ContextDim { expected: usize, found: usize },
}

/// How a token-level score is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Summary {
    /// Mean log-likelihood of the context words; higher is more
    /// compositional.
    MeanLogLikelihood,
    /// `exp(-mean_ll)`; lower is more compositional.
    Perplexity,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Summary::MeanLogLikelihood => "logprob",
            Summary::Perplexity => "ppl",
        })
    }
}

impl FromStr for Summary {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logprob" => Ok(Summary::MeanLogLikelihood),
            "ppl" => Ok(Summary::Perplexity),
            other => Err(format!("unknown summary {other:?} (expected logprob or ppl)")),
        }
    }
}

/// Settings for the token-level scorer.
#[derive(Debug, Clone)]
pub struct TokenScoreConfig {
    /// Total context window; `window / 2` words are taken on each side of
    /// the phrase, truncated at sentence boundaries without borrowing from
    /// the other side.
    pub window: usize,
    pub summary: Summary,
}

impl Default for TokenScoreConfig {
    fn default() -> Self {
        Self {
            window: 6,
            summary: Summary::MeanLogLikelihood,
        }
    }
}

/// One scored occurrence of a phrase in context.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredOccurrence {
    /// Mean log-likelihood of the scorable context words.
    pub mean_log_likelihood: f64,
    /// The summary value per the config: the mean log-likelihood itself or
    /// its perplexity.
    pub score: f64,
    /// Context tokens inside the window.
    pub n_context_total: usize,
    /// Context tokens that were found in the context vocabulary.
    pub n_context_used: usize,
}

/// Type-level compositionality of a tagged phrase.
///
/// For a two-word phrase the constituent similarities are interpolated with
/// `alpha`; for longer phrases every constituent gets uniform weight `1/k`
/// and `alpha` is unused.
pub fn score_type_level(
    model: &CompositionModel,
    tokens: &[TaggedWord],
    alpha: f64,
    words: &EmbeddingTable,
) -> Result<f64, ScoreError> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(ScoreError::BadAlpha(alpha));
    }
    let tree = PhraseTree::build(tokens)?;
    let z = model.compose_phrase(&tree, words)?;
    let sims: Vec<f64> = tokens
        .iter()
        .map(|t| {
            let v = words
                .get(&t.word)
                .expect("compose_phrase verified the vocabulary");
            cosine(v, z.view())
        })
        .collect::<Result<_, _>>()?;
    Ok(if sims.len() == 2 {
        alpha * sims[0] + (1.0 - alpha) * sims[1]
    } else {
        sims.iter().sum::<f64>() / sims.len() as f64
    })
}

/// Log-softmax scores `z . v_w - log Z` for every word in the context
/// table, in insertion order. `Z` sums `exp(z . v_w)` over the whole table.
pub fn log_softmax(
    z: ArrayView1<'_, f64>,
    contexts: &EmbeddingTable,
) -> Result<Vec<f64>, ScoreError> {
    if contexts.is_empty() {
        return Err(ScoreError::EmptyContextTable);
    }
    if z.len() != contexts.dim() {
        return Err(ScoreError::ContextDim {
            expected: contexts.dim(),
            found: z.len(),
        });
    }
    let scores: Vec<f64> = contexts.iter().map(|(_, v)| z.dot(&v)).collect();
    let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(scores.into_iter().map(|s| s - log_z).collect())
}

/// Mean log-likelihood of `context_words` under the softmax distribution
/// induced by `z` over the context table. Words missing from the table are
/// the caller's concern: every word passed here must be present.
pub fn context_log_likelihood(
    z: ArrayView1<'_, f64>,
    context_words: &[&str],
    contexts: &EmbeddingTable,
) -> Result<f64, ScoreError> {
    if context_words.is_empty() {
        return Err(ScoreError::NoScorableContext);
    }
    if contexts.is_empty() {
        return Err(ScoreError::EmptyContextTable);
    }
    if z.len() != contexts.dim() {
        return Err(ScoreError::ContextDim {
            expected: contexts.dim(),
            found: z.len(),
        });
    }
    // Exact normalizer over the full table, in insertion order.
    let mut max = f64::NEG_INFINITY;
    let scores: Vec<f64> = contexts
        .iter()
        .map(|(_, v)| {
            let s = z.dot(&v);
            max = max.max(s);
            s
        })
        .collect();
    let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let mut total = 0.0;
    for word in context_words {
        let v = contexts
            .get(word)
            .unwrap_or_else(|| panic!("context word {word:?} not in the context table"));
        total += z.dot(&v) - log_z;
    }
    Ok(total / context_words.len() as f64)
}

/// `exp(-mean_ll)`: the perplexity of the context under the composed vector.
pub fn perplexity(mean_log_likelihood: f64) -> f64 {
    (-mean_log_likelihood).exp()
}

/// Scores one occurrence `sentence[span.0..span.1]` of a phrase.
///
/// The phrase vector is composed over the left-branching tree of the span's
/// tokens; the context is `window / 2` tokens on each side, truncated at the
/// sentence boundaries. Context tokens missing from the context table are
/// skipped (and reflected in `n_context_used`); if none remain the
/// occurrence is unscorable.
pub fn score_occurrence(
    model: &CompositionModel,
    sentence: &[TaggedWord],
    span: (usize, usize),
    words: &EmbeddingTable,
    contexts: &EmbeddingTable,
    cfg: &TokenScoreConfig,
) -> Result<ScoredOccurrence, ScoreError> {
    if cfg.window < 2 {
        return Err(ScoreError::BadWindow(cfg.window));
    }
    let (start, end) = span;
    if start >= end || end > sentence.len() || end - start < 2 {
        return Err(ScoreError::BadSpan {
            start,
            end,
            len: sentence.len(),
        });
    }
    let z = model.compose_tokens(&sentence[start..end], words)?;

    let half = cfg.window / 2;
    let left = &sentence[start.saturating_sub(half)..start];
    let right = &sentence[end..(end + half).min(sentence.len())];
    let mut usable: Vec<&str> = Vec::with_capacity(left.len() + right.len());
    for token in left.iter().chain(right.iter()) {
        if contexts.contains(&token.word) {
            usable.push(&token.word);
        }
    }
    let n_context_total = left.len() + right.len();
    if usable.is_empty() {
        return Err(ScoreError::NoScorableContext);
    }
    let mean_ll = context_log_likelihood(z.view(), &usable, contexts)?;
    let score = match cfg.summary {
        Summary::MeanLogLikelihood => mean_ll,
        Summary::Perplexity => perplexity(mean_ll),
    };
    Ok(ScoredOccurrence {
        mean_log_likelihood: mean_ll,
        score,
        n_context_total,
        n_context_used: usable.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::{ConcatParams, PerKey};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// x, y unit vectors with x.e1 = 0.8 and y.e1 = 0.6, plus a matrix
    /// model that sends exactly this pair to e1.
    fn crafted_setup() -> (EmbeddingTable, CompositionModel) {
        let words = EmbeddingTable::from_entries(
            3,
            vec![
                ("left", vec![0.8, 0.6, 0.0]),
                ("right", vec![0.6, 0.8, 0.0]),
            ],
        )
        .unwrap();
        // W row 0 = [x; y] / 2 so W [x; y] = [1, 0, 0].
        let mut block = Array2::zeros((3, 6));
        for (c, v) in [0.8, 0.6, 0.0, 0.6, 0.8, 0.0].iter().enumerate() {
            block[[0, c]] = v / 2.0;
        }
        let params = ConcatParams::new(PerKey::from_fn(|_| block.clone())).unwrap();
        (words, CompositionModel::Concat(params))
    }

    #[test]
    fn type_score_interpolates_constituent_similarities() {
        let (words, model) = crafted_setup();
        let tokens = TaggedWord::parse_sequence("left_JJ right_NN").unwrap();
        // cos(x, z) = 0.8, cos(y, z) = 0.6.
        let cases = [(0.5, 0.7), (1.0, 0.8), (0.0, 0.6), (0.25, 0.65)];
        for (alpha, expected) in cases {
            let g = score_type_level(&model, &tokens, alpha, &words).unwrap();
            assert_abs_diff_eq!(g, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn additive_score_ignores_alpha_for_unit_vectors() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for trial in 0..20 {
            let mut x: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut y: Vec<f64> = (0..6).map(|_| rng.random::<f64>() - 0.5).collect();
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            x.iter_mut().for_each(|v| *v /= nx);
            y.iter_mut().for_each(|v| *v /= ny);
            let words =
                EmbeddingTable::from_entries(6, vec![("a", x), ("b", y)]).unwrap();
            let tokens = TaggedWord::parse_sequence("a_NN b_NN").unwrap();
            let base = score_type_level(&CompositionModel::Add, &tokens, 0.5, &words).unwrap();
            for alpha in [0.0, 0.25, 0.75, 1.0] {
                let g =
                    score_type_level(&CompositionModel::Add, &tokens, alpha, &words).unwrap();
                assert_abs_diff_eq!(g, base, epsilon = 1e-12);
            }
            let _ = trial;
        }
    }

    #[test]
    fn long_phrases_use_uniform_weights() {
        let words = EmbeddingTable::from_entries(
            3,
            vec![
                ("a", vec![1.0, 0.0, 0.0]),
                ("b", vec![0.0, 1.0, 0.0]),
                ("c", vec![0.0, 0.0, 1.0]),
            ],
        )
        .unwrap();
        let tokens = TaggedWord::parse_sequence("a_NN b_NN c_NN").unwrap();
        // z = [1,1,1]; cos(e_i, z) = 1/sqrt(3) for each constituent.
        let g = score_type_level(&CompositionModel::Add, &tokens, 0.9, &words).unwrap();
        assert_abs_diff_eq!(g, 1.0 / 3f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn type_score_validates_alpha() {
        let (words, model) = crafted_setup();
        let tokens = TaggedWord::parse_sequence("left_JJ right_NN").unwrap();
        for alpha in [-0.1, 1.1, f64::NAN] {
            assert!(matches!(
                score_type_level(&model, &tokens, alpha, &words),
                Err(ScoreError::BadAlpha(_))
            ));
        }
    }

    #[test]
    fn type_score_propagates_oov() {
        let (words, model) = crafted_setup();
        let tokens = TaggedWord::parse_sequence("left_JJ gone_NN").unwrap();
        assert!(matches!(
            score_type_level(&model, &tokens, 0.5, &words),
            Err(ScoreError::Compose(ComposeError::MissingWords { .. }))
        ));
    }

    fn two_word_contexts() -> EmbeddingTable {
        EmbeddingTable::from_entries(2, vec![("c1", vec![1.0, 0.0]), ("c2", vec![0.0, 1.0])])
            .unwrap()
    }

    #[test]
    fn log_softmax_matches_hand_computation() {
        // z = e1: scores are [1, 0]; log Z = ln(e + 1).
        let contexts = two_word_contexts();
        let z = array![1.0, 0.0];
        let lls = log_softmax(z.view(), &contexts).unwrap();
        assert_abs_diff_eq!(lls[0], -0.313261687, epsilon = 1e-6);
        assert_abs_diff_eq!(lls[1], -1.313261687, epsilon = 1e-6);
    }

    #[test]
    fn log_softmax_is_a_distribution() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let entries: Vec<(String, Vec<f64>)> = (0..200)
            .map(|i| {
                (
                    format!("w{i}"),
                    (0..10).map(|_| rng.random::<f64>() - 0.5).collect(),
                )
            })
            .collect();
        let contexts = EmbeddingTable::from_entries(10, entries).unwrap();
        let z = Array1::from_shape_fn(10, |_| rng.random::<f64>() - 0.5);
        let lls = log_softmax(z.view(), &contexts).unwrap();
        let total: f64 = lls.iter().map(|l| l.exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        // Max-shift keeps huge scores finite.
        let z_big = &z * 500.0;
        let lls = log_softmax(z_big.view(), &contexts).unwrap();
        assert!(lls.iter().all(|l| l.is_finite()));
        let total: f64 = lls.iter().map(|l| l.exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn context_likelihood_known_values() {
        let contexts = two_word_contexts();
        let z = array![1.0, 0.0];
        let one = context_log_likelihood(z.view(), &["c1"], &contexts).unwrap();
        assert_abs_diff_eq!(one, -0.313261687, epsilon = 1e-6);
        // Repeats average to the same value.
        let rep = context_log_likelihood(z.view(), &["c1", "c1"], &contexts).unwrap();
        assert_abs_diff_eq!(rep, one, epsilon = 1e-12);
        // Mixed contexts average the two log-likelihoods.
        let mixed = context_log_likelihood(z.view(), &["c1", "c2"], &contexts).unwrap();
        assert_abs_diff_eq!(mixed, (-0.313261687 + -1.313261687) / 2.0, epsilon = 1e-6);
        // A zero vector scores every word uniformly.
        let zero = array![0.0, 0.0];
        let uni = context_log_likelihood(zero.view(), &["c1"], &contexts).unwrap();
        assert_abs_diff_eq!(uni, -(2f64.ln()), epsilon = 1e-12);
    }

    #[test]
    fn perplexity_known_values() {
        assert_abs_diff_eq!(perplexity(0.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(perplexity(-(100f64.ln())), 100.0, epsilon = 1e-9);
        // For the two-word table above: ppl = Z / e^s = (e + 1) / e.
        assert_abs_diff_eq!(perplexity(-0.313261687), 1.367879, epsilon = 1e-5);
    }

    fn occurrence_fixture() -> (EmbeddingTable, EmbeddingTable, Vec<TaggedWord>) {
        let words = EmbeddingTable::from_entries(
            2,
            vec![("p", vec![1.0, 0.0]), ("q", vec![0.0, 1.0])],
        )
        .unwrap();
        let contexts = EmbeddingTable::from_entries(
            2,
            vec![
                ("c0", vec![0.5, 0.5]),
                ("c1", vec![1.0, 0.0]),
                ("c2", vec![0.0, 1.0]),
                ("c3", vec![-1.0, 0.0]),
            ],
        )
        .unwrap();
        let sentence = TaggedWord::parse_sequence("c0_NN p_NN q_NN c1_NN c2_NN c3_NN").unwrap();
        (words, contexts, sentence)
    }

    #[test]
    fn occurrence_window_truncates_at_boundaries() {
        let (words, contexts, _) = occurrence_fixture();
        let sentence = TaggedWord::parse_sequence("p_NN q_NN c1_NN c2_NN c3_NN").unwrap();
        let cfg = TokenScoreConfig {
            window: 4,
            summary: Summary::MeanLogLikelihood,
        };
        let scored = score_occurrence(
            &CompositionModel::Add,
            &sentence,
            (0, 2),
            &words,
            &contexts,
            &cfg,
        )
        .unwrap();
        // No left context; exactly two right words, no borrowing of c3.
        assert_eq!(scored.n_context_total, 2);
        assert_eq!(scored.n_context_used, 2);
        let z = array![1.0, 1.0];
        let direct = context_log_likelihood(z.view(), &["c1", "c2"], &contexts).unwrap();
        assert_abs_diff_eq!(scored.mean_log_likelihood, direct, epsilon = 1e-12);
        assert_abs_diff_eq!(scored.score, direct, epsilon = 1e-12);
    }

    #[test]
    fn occurrence_takes_both_sides() {
        let (words, contexts, sentence) = occurrence_fixture();
        let cfg = TokenScoreConfig {
            window: 6,
            summary: Summary::MeanLogLikelihood,
        };
        let scored = score_occurrence(
            &CompositionModel::Add,
            &sentence,
            (1, 3),
            &words,
            &contexts,
            &cfg,
        )
        .unwrap();
        // Left side has only c0; right side has all of c1, c2, c3.
        assert_eq!(scored.n_context_total, 4);
        assert_eq!(scored.n_context_used, 4);
        let z = array![1.0, 1.0];
        let direct =
            context_log_likelihood(z.view(), &["c0", "c1", "c2", "c3"], &contexts).unwrap();
        assert_abs_diff_eq!(scored.mean_log_likelihood, direct, epsilon = 1e-12);
    }

    #[test]
    fn occurrence_skips_oov_context() {
        let (words, _, sentence) = occurrence_fixture();
        let contexts = EmbeddingTable::from_entries(
            2,
            vec![("c1", vec![1.0, 0.0]), ("c3", vec![-1.0, 0.0])],
        )
        .unwrap();
        let cfg = TokenScoreConfig {
            window: 6,
            summary: Summary::MeanLogLikelihood,
        };
        let scored = score_occurrence(
            &CompositionModel::Add,
            &sentence,
            (1, 3),
            &words,
            &contexts,
            &cfg,
        )
        .unwrap();
        assert_eq!(scored.n_context_total, 4);
        assert_eq!(scored.n_context_used, 2); // c0 and c2 are missing

        let empty_contexts = EmbeddingTable::from_entries(2, vec![("zz", vec![1.0, 1.0])]).unwrap();
        assert!(matches!(
            score_occurrence(
                &CompositionModel::Add,
                &sentence,
                (1, 3),
                &words,
                &empty_contexts,
                &cfg,
            ),
            Err(ScoreError::NoScorableContext)
        ));
    }

    #[test]
    fn occurrence_validates_inputs() {
        let (words, contexts, sentence) = occurrence_fixture();
        let cfg = TokenScoreConfig::default();
        for span in [(3, 3), (1, 2), (4, 7), (5, 3)] {
            assert!(matches!(
                score_occurrence(
                    &CompositionModel::Add,
                    &sentence,
                    span,
                    &words,
                    &contexts,
                    &cfg
                ),
                Err(ScoreError::BadSpan { .. })
            ));
        }
        let bad = TokenScoreConfig {
            window: 1,
            summary: Summary::MeanLogLikelihood,
        };
        assert!(matches!(
            score_occurrence(
                &CompositionModel::Add,
                &sentence,
                (1, 3),
                &words,
                &contexts,
                &bad
            ),
            Err(ScoreError::BadWindow(1))
        ));
    }

    #[test]
    fn perplexity_summary_transforms_the_score() {
        let (words, contexts, sentence) = occurrence_fixture();
        let cfg = TokenScoreConfig {
            window: 4,
            summary: Summary::Perplexity,
        };
        let scored = score_occurrence(
            &CompositionModel::Add,
            &sentence,
            (1, 3),
            &words,
            &contexts,
            &cfg,
        )
        .unwrap();
        assert_abs_diff_eq!(
            scored.score,
            perplexity(scored.mean_log_likelihood),
            epsilon = 1e-12
        );
        assert!(scored.score >= 1.0 || scored.mean_log_likelihood > 0.0);
    }

    #[test]
    fn summary_parses_cli_names() {
        assert_eq!(
            "logprob".parse::<Summary>().unwrap(),
            Summary::MeanLogLikelihood
        );
        assert_eq!("ppl".parse::<Summary>().unwrap(), Summary::Perplexity);
        assert!("perplexity".parse::<Summary>().is_err());
        assert_eq!(Summary::Perplexity.to_string(), "ppl");
    }
}
