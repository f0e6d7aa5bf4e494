//! Supervised training of composition models from paraphrase triples.
//!
//! The supervision is a list of two-to-one paraphrases: a tagged two-word
//! phrase on the left, a single target word on the right, and a confidence
//! weight. Each triple whose three words are all in the vocabulary becomes
//! one regression row: the phrase's constituent vectors form the design row
//! and the target word's vector is the regression target, so the learned
//! map sends phrase inputs close to the vector of a word that means the
//! same thing.
//!
//! The parametric variants are trained per POS-pair key. Keys without usable
//! data fall back to neutral parameters (addition for the matrix model, the
//! elementwise product for the tensor model), and the report says so.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::Serialize;
use thiserror::Error;

use crate::composition::{
    ComposeError, CompositionModel, ConcatParams, PerKey, PosPairKey, TaggedWord, TensorParams,
};
use crate::embeddings::EmbeddingTable;
use crate::regression::{
    cross_validate, fit_lasso, fit_ridge, fit_ridge_weighted, CvReport, LassoOptions, Penalty,
};

/// When a per-coordinate denominator of the scaled-multiplicative closed
/// form falls below this, the coordinate's scale is pinned to 1.
const DEGENERATE_DENOM: f64 = 1e-300;

/// Errors raised while loading supervision or fitting models.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("no usable paraphrase triples in the input")]
    NoTrainingData,
    #[error("no usable training rows for key {key} (all triples out of vocabulary)")]
    NoUsableRows { key: PosPairKey },
    #[error("empty regression problem")]
    EmptyProblem,
    #[error("design has {design} rows but targets have {targets}")]
    RowMismatch { design: usize, targets: usize },
    #[error("penalty weight must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("row weight {index} is negative or non-finite")]
    BadWeight { index: usize },
    #[error("{found} row weights for {rows} rows")]
    WeightLength { found: usize, rows: usize },
    #[error("non-finite values in design or targets")]
    NonFiniteData,
    #[error("coordinate descent produced a non-finite objective")]
    NonFiniteResult,
    #[error("normal equations are numerically singular (penalty too small for this data)")]
    SingularSystem,
    #[error("cross-validation needs at least 2 folds, got {folds}")]
    BadFolds { folds: usize },
    #[error("cross-validation with {folds} folds needs at least that many rows, got {rows}")]
    TooFewRows { rows: usize, folds: usize },
    #[error("empty penalty grid")]
    EmptyGrid,
    #[error(transparent)]
    Compose(#[from] ComposeError),
}

/// One two-to-one paraphrase triple.
#[derive(Debug, Clone, PartialEq)]
pub struct ParaphrasePair {
    pub left: TaggedWord,
    pub right: TaggedWord,
    pub target: String,
    pub weight: f64,
}

impl ParaphrasePair {
    /// POS-pair key of the phrase side.
    pub fn key(&self) -> PosPairKey {
        PosPairKey::from_labels(self.left.tag, self.right.tag)
    }
}

/// Lines skipped while loading a paraphrase file, by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SkipStats {
    /// Left side does not have exactly two words, or the target is not a
    /// single word.
    pub not_two_to_one: usize,
    /// Wrong field count, untagged tokens, or a bad weight.
    pub unparseable: usize,
}

impl SkipStats {
    pub fn total(&self) -> usize {
        self.not_two_to_one + self.unparseable
    }
}

/// A paraphrase collection grouped by POS-pair key.
#[derive(Debug, Clone)]
pub struct ParaphraseSet {
    by_key: PerKey<Vec<ParaphrasePair>>,
    total: usize,
    pub skipped: SkipStats,
}

impl ParaphraseSet {
    /// Groups already-parsed pairs by key.
    pub fn from_pairs(pairs: Vec<ParaphrasePair>, skipped: SkipStats) -> Self {
        let mut by_key = PerKey::from_fn(|_| Vec::new());
        let total = pairs.len();
        for pair in pairs {
            by_key[pair.key()].push(pair);
        }
        Self {
            by_key,
            total,
            skipped,
        }
    }

    /// Number of usable triples across all keys.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Triples for one key, in input order.
    pub fn pairs(&self, key: PosPairKey) -> &[ParaphrasePair] {
        &self.by_key[key]
    }

    /// Per-key triple counts in key declaration order.
    pub fn counts(&self) -> Vec<(PosPairKey, usize)> {
        PosPairKey::ALL
            .iter()
            .map(|&k| (k, self.by_key[k].len()))
            .collect()
    }
}

/// Loads a tab-separated paraphrase file:
/// `word1_TAG1 word2_TAG2 <TAB> target <TAB> weight`.
///
/// Lines that are not two-to-one (left side not exactly two words, target
/// not a single word) or cannot be parsed are skipped and counted. A file
/// with zero usable triples is an error.
pub fn load_paraphrases(path: impl AsRef<Path>) -> Result<ParaphraseSet, TrainError> {
    read_paraphrases(BufReader::new(File::open(path)?))
}

/// See [`load_paraphrases`].
pub fn read_paraphrases<R: BufRead>(reader: R) -> Result<ParaphraseSet, TrainError> {
    let mut pairs = Vec::new();
    let mut skipped = SkipStats::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            skipped.unparseable += 1;
            continue;
        }
        let left_tokens = match TaggedWord::parse_sequence(fields[0]) {
            Ok(tokens) => tokens,
            Err(_) => {
                skipped.unparseable += 1;
                continue;
            }
        };
        if left_tokens.len() != 2 {
            skipped.not_two_to_one += 1;
            continue;
        }
        let target = fields[1].trim();
        if target.is_empty() || target.split_whitespace().count() != 1 {
            skipped.not_two_to_one += 1;
            continue;
        }
        let weight: f64 = match fields[2].trim().parse() {
            Ok(w) if f64::is_finite(w) && w >= 0.0 => w,
            _ => {
                skipped.unparseable += 1;
                continue;
            }
        };
        let mut tokens = left_tokens.into_iter();
        pairs.push(ParaphrasePair {
            left: tokens.next().expect("length checked"),
            right: tokens.next().expect("length checked"),
            target: target.to_string(),
            weight,
        });
    }
    if pairs.is_empty() {
        return Err(TrainError::NoTrainingData);
    }
    Ok(ParaphraseSet::from_pairs(pairs, skipped))
}

/// How constituent pairs are laid out as design rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignLayout {
    /// `[x; y]`, width `2N` — for the concatenation-matrix model.
    Concat,
    /// `vec(x (x) y)` with `row[j*N + k] = x[j] * y[k]`, width `N^2` — for
    /// the tensor model.
    TensorProduct,
}

/// A per-key regression problem assembled from in-vocabulary triples.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub key: PosPairKey,
    pub design: Array2<f64>,
    pub targets: Array2<f64>,
    pub weights: Array1<f64>,
    /// Triples dropped because a constituent or the target was missing from
    /// the vocabulary.
    pub dropped_oov: usize,
}

/// Builds the design and target matrices for one key.
pub fn build_problem(
    key: PosPairKey,
    pairs: &[ParaphrasePair],
    words: &EmbeddingTable,
    layout: DesignLayout,
) -> Result<RegressionProblem, TrainError> {
    let n = words.dim();
    let width = match layout {
        DesignLayout::Concat => 2 * n,
        DesignLayout::TensorProduct => n * n,
    };
    let mut design_rows = Vec::new();
    let mut target_rows = Vec::new();
    let mut weights = Vec::new();
    let mut dropped_oov = 0;
    for pair in pairs {
        let (x, y, t) = match (
            words.get(&pair.left.word),
            words.get(&pair.right.word),
            words.get(&pair.target),
        ) {
            (Some(x), Some(y), Some(t)) => (x, y, t),
            _ => {
                dropped_oov += 1;
                continue;
            }
        };
        match layout {
            DesignLayout::Concat => {
                design_rows.extend(x.iter().copied());
                design_rows.extend(y.iter().copied());
            }
            DesignLayout::TensorProduct => {
                for &xj in x.iter() {
                    for &yk in y.iter() {
                        design_rows.push(xj * yk);
                    }
                }
            }
        }
        target_rows.extend(t.iter().copied());
        weights.push(pair.weight);
    }
    let rows = weights.len();
    if rows == 0 {
        return Err(TrainError::NoUsableRows { key });
    }
    Ok(RegressionProblem {
        key,
        design: Array2::from_shape_vec((rows, width), design_rows)
            .expect("row width is fixed by the layout"),
        targets: Array2::from_shape_vec((rows, n), target_rows)
            .expect("target width is the embedding dimension"),
        weights: Array1::from_vec(weights),
        dropped_oov,
    })
}

/// Cross-validates the penalty weight for one assembled problem; thin
/// wrapper over [`crate::regression::cross_validate`].
pub fn cross_validate_problem(
    problem: &RegressionProblem,
    grid: &[f64],
    folds: usize,
    penalty: Penalty,
    seed: u64,
    weighted: bool,
    opts: &LassoOptions,
) -> Result<CvReport, TrainError> {
    cross_validate(
        problem.design.view(),
        problem.targets.view(),
        weighted.then(|| problem.weights.view()),
        grid,
        folds,
        penalty,
        seed,
        opts,
    )
}

/// Which composition function to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    Add,
    Mult1,
    Mult2,
    Concat,
    Tensor,
}

impl ModelVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ModelVariant::Add => "add",
            ModelVariant::Mult1 => "mult1",
            ModelVariant::Mult2 => "mult2",
            ModelVariant::Concat => "concat",
            ModelVariant::Tensor => "tensor",
        }
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "add" => Ok(ModelVariant::Add),
            "mult1" => Ok(ModelVariant::Mult1),
            "mult2" => Ok(ModelVariant::Mult2),
            "concat" => Ok(ModelVariant::Concat),
            "tensor" => Ok(ModelVariant::Tensor),
            other => Err(format!(
                "unknown variant {other:?} (expected add, mult1, mult2, concat, or tensor)"
            )),
        }
    }
}

/// Knobs for [`train_model`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub penalty: Penalty,
    /// Penalty grid searched by cross-validation.
    pub grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    /// Use the triple confidence weights in the squared-error term
    /// (supported for the l2 penalty only).
    pub weighted: bool,
    pub lasso: LassoOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            penalty: Penalty::L2,
            grid: default_lambda_grid(),
            folds: 5,
            seed: 42,
            weighted: false,
            lasso: LassoOptions::default(),
        }
    }
}

/// Eight-point geometric grid from `1e-4` to `1e2`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..8)
        .map(|i| 1e-4 * 10f64.powf(6.0 * i as f64 / 7.0))
        .collect()
}

/// Per-key training diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct KeyReport {
    pub pairs_total: usize,
    pub rows_used: usize,
    pub dropped_oov: usize,
    /// True when the key had no usable data and neutral fallback parameters
    /// were installed instead.
    pub fallback: bool,
    pub chosen_lambda: Option<f64>,
    pub cv: Option<CvReport>,
}

/// Diagnostics for the scaled-multiplicative closed form.
#[derive(Debug, Clone, Serialize)]
pub struct Mult2Report {
    pub rows_used: usize,
    pub dropped_oov: usize,
    /// Coordinates whose denominator vanished; their scale is pinned to 1.
    pub degenerate_dims: Vec<usize>,
}

/// Summary of a training run, serializable as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub variant: String,
    pub dim: usize,
    pub penalty: String,
    pub folds: usize,
    pub seed: u64,
    pub weighted: bool,
    pub keys: BTreeMap<String, KeyReport>,
    pub mult2: Option<Mult2Report>,
    pub warnings: Vec<String>,
}

/// A trained model plus its report.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CompositionModel,
    pub report: TrainReport,
}

/// Trains `variant` on the paraphrase set.
///
/// * `add` and `mult1` have no parameters; training just reports that.
/// * `mult2` has a per-coordinate closed form, pooled across keys.
/// * `concat` and `tensor` fit one parameter block per key: the penalty
///   weight is chosen by k-fold cross-validation over `cfg.grid`, then the
///   block is refit on all of the key's rows. Keys without usable rows get
///   neutral fallbacks and a warning. Keys with fewer rows than folds are
///   fit at the middle of the grid without cross-validation, with a warning.
pub fn train_model(
    variant: ModelVariant,
    set: &ParaphraseSet,
    words: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if set.is_empty() {
        return Err(TrainError::NoTrainingData);
    }
    if cfg.grid.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let n = words.dim();
    let mut report = TrainReport {
        variant: variant.name().to_string(),
        dim: n,
        penalty: cfg.penalty.to_string(),
        folds: cfg.folds,
        seed: cfg.seed,
        weighted: cfg.weighted,
        keys: BTreeMap::new(),
        mult2: None,
        warnings: Vec::new(),
    };

    let model = match variant {
        ModelVariant::Add => {
            report
                .warnings
                .push("variant add has no parameters; nothing was estimated".to_string());
            CompositionModel::Add
        }
        ModelVariant::Mult1 => {
            report
                .warnings
                .push("variant mult1 has no parameters; nothing was estimated".to_string());
            CompositionModel::Mult1
        }
        ModelVariant::Mult2 => {
            let (scale, mult2) = fit_mult2(set, words, cfg.weighted)?;
            if !mult2.degenerate_dims.is_empty() {
                report.warnings.push(format!(
                    "{} coordinate(s) had a vanishing denominator; scale pinned to 1",
                    mult2.degenerate_dims.len()
                ));
            }
            report.mult2 = Some(mult2);
            CompositionModel::Mult2 { scale }
        }
        ModelVariant::Concat => {
            let mut blocks: Vec<Array2<f64>> = Vec::with_capacity(PosPairKey::ALL.len());
            for key in PosPairKey::ALL {
                let (block, key_report) = train_key_block(
                    key,
                    set.pairs(key),
                    words,
                    DesignLayout::Concat,
                    cfg,
                    &mut report.warnings,
                )?;
                report.keys.insert(key.to_string(), key_report);
                blocks.push(match block {
                    Some(w) => w,
                    None => ConcatParams::identity(n).block(key).clone(),
                });
            }
            let mut iter = blocks.into_iter();
            let per_key = PerKey::from_fn(|_| iter.next().expect("one block per key"));
            CompositionModel::Concat(ConcatParams::new(per_key)?)
        }
        ModelVariant::Tensor => {
            let mut blocks: Vec<Array3<f64>> = Vec::with_capacity(PosPairKey::ALL.len());
            for key in PosPairKey::ALL {
                let (block, key_report) = train_key_block(
                    key,
                    set.pairs(key),
                    words,
                    DesignLayout::TensorProduct,
                    cfg,
                    &mut report.warnings,
                )?;
                report.keys.insert(key.to_string(), key_report);
                blocks.push(match block {
                    Some(w) => {
                        let mut tensor = Array3::zeros((n, n, n));
                        for i in 0..n {
                            for j in 0..n {
                                for k in 0..n {
                                    tensor[[i, j, k]] = w[[i, j * n + k]];
                                }
                            }
                        }
                        tensor
                    }
                    None => TensorParams::diagonal(n).block(key).clone(),
                });
            }
            let mut iter = blocks.into_iter();
            let per_key = PerKey::from_fn(|_| iter.next().expect("one block per key"));
            CompositionModel::Tensor(TensorParams::new(per_key)?)
        }
    };
    Ok(TrainOutcome { model, report })
}

/// Trains one key's parameter block; `None` means "use the fallback".
fn train_key_block(
    key: PosPairKey,
    pairs: &[ParaphrasePair],
    words: &EmbeddingTable,
    layout: DesignLayout,
    cfg: &TrainConfig,
    warnings: &mut Vec<String>,
) -> Result<(Option<Array2<f64>>, KeyReport), TrainError> {
    let mut key_report = KeyReport {
        pairs_total: pairs.len(),
        rows_used: 0,
        dropped_oov: 0,
        fallback: false,
        chosen_lambda: None,
        cv: None,
    };
    if pairs.is_empty() {
        warnings.push(format!("key {key}: no training pairs; using fallback parameters"));
        key_report.fallback = true;
        return Ok((None, key_report));
    }
    let problem = match build_problem(key, pairs, words, layout) {
        Ok(p) => p,
        Err(TrainError::NoUsableRows { .. }) => {
            warnings.push(format!(
                "key {key}: all {} pair(s) out of vocabulary; using fallback parameters",
                pairs.len()
            ));
            key_report.fallback = true;
            key_report.dropped_oov = pairs.len();
            return Ok((None, key_report));
        }
        Err(other) => return Err(other),
    };
    key_report.rows_used = problem.design.nrows();
    key_report.dropped_oov = problem.dropped_oov;

    let lambda = if problem.design.nrows() >= cfg.folds && cfg.grid.len() > 1 {
        let cv = cross_validate_problem(
            &problem,
            &cfg.grid,
            cfg.folds,
            cfg.penalty,
            cfg.seed,
            cfg.weighted,
            &cfg.lasso,
        )?;
        let lambda = cv.chosen_lambda;
        key_report.cv = Some(cv);
        lambda
    } else if cfg.grid.len() == 1 {
        cfg.grid[0]
    } else {
        let lambda = cfg.grid[cfg.grid.len() / 2];
        warnings.push(format!(
            "key {key}: {} row(s) is fewer than {} folds; fitting at lambda={lambda:.6e} without cross-validation",
            problem.design.nrows(),
            cfg.folds
        ));
        lambda
    };
    key_report.chosen_lambda = Some(lambda);

    let block = match (cfg.penalty, cfg.weighted) {
        (Penalty::L2, false) => fit_ridge(problem.design.view(), problem.targets.view(), lambda)?,
        (Penalty::L2, true) => fit_ridge_weighted(
            problem.design.view(),
            problem.targets.view(),
            problem.weights.view(),
            lambda,
        )?,
        (Penalty::L1, _) => {
            fit_lasso(problem.design.view(), problem.targets.view(), lambda, &cfg.lasso)?
                .coefficients
        }
    };
    Ok((Some(block), key_report))
}

/// Closed-form per-coordinate scale for the scaled-multiplicative model,
/// pooled over all keys: `scale[i] = sum(x_i y_i t_i) / sum((x_i y_i)^2)`.
fn fit_mult2(
    set: &ParaphraseSet,
    words: &EmbeddingTable,
    weighted: bool,
) -> Result<(Array1<f64>, Mult2Report), TrainError> {
    let n = words.dim();
    let mut numerator = Array1::<f64>::zeros(n);
    let mut denominator = Array1::<f64>::zeros(n);
    let mut rows_used = 0;
    let mut dropped_oov = 0;
    for key in PosPairKey::ALL {
        for pair in set.pairs(key) {
            let (x, y, t) = match (
                words.get(&pair.left.word),
                words.get(&pair.right.word),
                words.get(&pair.target),
            ) {
                (Some(x), Some(y), Some(t)) => (x, y, t),
                _ => {
                    dropped_oov += 1;
                    continue;
                }
            };
            let w = if weighted { pair.weight } else { 1.0 };
            if w == 0.0 {
                continue;
            }
            rows_used += 1;
            for i in 0..n {
                let p = x[i] * y[i];
                numerator[i] += w * p * t[i];
                denominator[i] += w * p * p;
            }
        }
    }
    if rows_used == 0 {
        return Err(TrainError::NoTrainingData);
    }
    let mut degenerate_dims = Vec::new();
    let mut scale = Array1::<f64>::zeros(n);
    for i in 0..n {
        if denominator[i] < DEGENERATE_DENOM {
            scale[i] = 1.0;
            degenerate_dims.push(i);
        } else {
            scale[i] = numerator[i] / denominator[i];
        }
    }
    Ok((
        scale,
        Mult2Report {
            rows_used,
            dropped_oov,
            degenerate_dims,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::composition::CoarseTag;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::io::Cursor;

    fn parse_set(text: &str) -> Result<ParaphraseSet, TrainError> {
        read_paraphrases(Cursor::new(text.to_string()))
    }

    #[test]
    fn loads_and_groups_triples() {
        let set = parse_set(
            "young_JJ people_NNS\tyouth\t0.9\n\
             the_DT ceasefire_NN\tceasefire\t0.8\n\
             stock_NN market_NN\texchange\t0.7\n",
        )
        .unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.pairs(PosPairKey::JjNn).len(), 1);
        assert_eq!(set.pairs(PosPairKey::DtNn).len(), 1);
        assert_eq!(set.pairs(PosPairKey::NnNn).len(), 1);
        assert_eq!(set.pairs(PosPairKey::VbVb).len(), 0);
        let pair = &set.pairs(PosPairKey::JjNn)[0];
        assert_eq!(pair.left.word, "young");
        assert_eq!(pair.left.tag, CoarseTag::Jj);
        assert_eq!(pair.right.word, "people");
        assert_eq!(pair.target, "youth");
        assert_abs_diff_eq!(pair.weight, 0.9);
    }

    #[test]
    fn skips_non_two_to_one_lines_with_counts() {
        let set = parse_set(
            "a_DT b_NN c_NN\td\t0.5\n\
             good_JJ day_NN\tvery nice\t0.5\n\
             fine_JJ day_NN\tok\t0.5\n",
        )
        .unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.skipped.not_two_to_one, 2);
        assert_eq!(set.skipped.unparseable, 0);
    }

    #[test]
    fn skips_unparseable_lines_with_counts() {
        let set = parse_set(
            "no tabs here\n\
             plainword other_NN\tx\t0.5\n\
             a_DT b_NN\tx\tnot-a-number\n\
             a_DT b_NN\tx\t-1\n\
             a_DT b_NN\tx\tinf\n\
             ok_JJ pair_NN\tx\t1.0\n",
        )
        .unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.skipped.unparseable, 5);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse_set(""), Err(TrainError::NoTrainingData)));
        assert!(matches!(
            parse_set("junk junk junk\n"),
            Err(TrainError::NoTrainingData)
        ));
    }

    fn tiny_words() -> EmbeddingTable {
        EmbeddingTable::from_entries(
            2,
            vec![
                ("a", vec![1.0, 2.0]),
                ("b", vec![3.0, 4.0]),
                ("t", vec![5.0, 6.0]),
            ],
        )
        .unwrap()
    }

    fn one_pair() -> ParaphrasePair {
        ParaphrasePair {
            left: TaggedWord::new("a", CoarseTag::Jj),
            right: TaggedWord::new("b", CoarseTag::Nn),
            target: "t".to_string(),
            weight: 2.0,
        }
    }

    #[test]
    fn concat_design_rows_concatenate_the_pair() {
        let problem = build_problem(
            PosPairKey::JjNn,
            &[one_pair()],
            &tiny_words(),
            DesignLayout::Concat,
        )
        .unwrap();
        assert_eq!(problem.design.shape(), [1, 4]);
        assert_eq!(
            problem.design.row(0).to_vec(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(problem.targets.row(0).to_vec(), vec![5.0, 6.0]);
        assert_eq!(problem.weights.to_vec(), vec![2.0]);
    }

    #[test]
    fn tensor_design_rows_are_outer_products() {
        let problem = build_problem(
            PosPairKey::JjNn,
            &[one_pair()],
            &tiny_words(),
            DesignLayout::TensorProduct,
        )
        .unwrap();
        assert_eq!(problem.design.shape(), [1, 4]);
        // x = [1,2], y = [3,4]: row = [x0y0, x0y1, x1y0, x1y1].
        assert_eq!(
            problem.design.row(0).to_vec(),
            vec![3.0, 4.0, 6.0, 8.0]
        );
    }

    #[test]
    fn oov_triples_are_dropped_and_counted() {
        let mut pairs = vec![one_pair()];
        pairs.push(ParaphrasePair {
            left: TaggedWord::new("missing", CoarseTag::Jj),
            right: TaggedWord::new("b", CoarseTag::Nn),
            target: "t".to_string(),
            weight: 1.0,
        });
        let problem = build_problem(
            PosPairKey::JjNn,
            &pairs,
            &tiny_words(),
            DesignLayout::Concat,
        )
        .unwrap();
        assert_eq!(problem.design.nrows(), 1);
        assert_eq!(problem.dropped_oov, 1);

        let all_oov = vec![ParaphrasePair {
            left: TaggedWord::new("missing", CoarseTag::Jj),
            right: TaggedWord::new("alsomissing", CoarseTag::Nn),
            target: "t".to_string(),
            weight: 1.0,
        }];
        assert!(matches!(
            build_problem(
                PosPairKey::JjNn,
                &all_oov,
                &tiny_words(),
                DesignLayout::Concat
            ),
            Err(TrainError::NoUsableRows {
                key: PosPairKey::JjNn
            })
        ));
    }

    /// Builds a synthetic corpus whose targets are exact linear images of
    /// the constituent pairs under a per-key planted map, plus a vocabulary
    /// holding every word involved.
    fn planted_concat_corpus(
        n: usize,
        per_key: usize,
        seed: u64,
    ) -> (ParaphraseSet, EmbeddingTable, PerKey<Array2<f64>>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let truth = PerKey::from_fn(|_| {
            Array2::from_shape_fn((n, 2 * n), |_| rng.random::<f64>() - 0.5)
        });
        let tags = |key: PosPairKey| match key {
            PosPairKey::DtNn => (CoarseTag::Dt, CoarseTag::Nn),
            PosPairKey::NnNn => (CoarseTag::Nn, CoarseTag::Nn),
            PosPairKey::JjNn => (CoarseTag::Jj, CoarseTag::Nn),
            PosPairKey::VbVb => (CoarseTag::Vb, CoarseTag::Vb),
            PosPairKey::RbJj => (CoarseTag::Rb, CoarseTag::Jj),
            PosPairKey::Other => (CoarseTag::Other, CoarseTag::Other),
        };
        let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
        let mut pairs = Vec::new();
        for key in PosPairKey::ALL {
            let (lt, rt) = tags(key);
            let w = &truth[key];
            for i in 0..per_key {
                let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
                let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
                let mut t = vec![0.0; n];
                for r in 0..n {
                    for c in 0..n {
                        t[r] += w[[r, c]] * x[c] + w[[r, n + c]] * y[c];
                    }
                }
                let lw = format!("{key}x{i}").to_lowercase().replace('-', "");
                let rw = format!("{key}y{i}").to_lowercase().replace('-', "");
                let tw = format!("{key}t{i}").to_lowercase().replace('-', "");
                entries.push((lw.clone(), x));
                entries.push((rw.clone(), y));
                entries.push((tw.clone(), t));
                pairs.push(ParaphrasePair {
                    left: TaggedWord::new(lw, lt),
                    right: TaggedWord::new(rw, rt),
                    target: tw,
                    weight: 1.0,
                });
            }
        }
        let words = EmbeddingTable::from_entries(n, entries).unwrap();
        (
            ParaphraseSet::from_pairs(pairs, SkipStats::default()),
            words,
            truth,
        )
    }

    #[test]
    fn concat_training_recovers_planted_blocks() {
        let (set, words, truth) = planted_concat_corpus(4, 40, 50);
        let cfg = TrainConfig {
            grid: vec![1e-8, 1e2],
            folds: 3,
            ..TrainConfig::default()
        };
        let outcome = train_model(ModelVariant::Concat, &set, &words, &cfg).unwrap();
        let params = match &outcome.model {
            CompositionModel::Concat(p) => p,
            other => panic!("expected concat, got {}", other.variant_name()),
        };
        for key in PosPairKey::ALL {
            let diff = params.block(key) - &truth[key];
            let rel = diff.iter().map(|v| v * v).sum::<f64>().sqrt()
                / truth[key].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(rel < 1e-4, "key {key}: relative error {rel}");
            let kr = &outcome.report.keys[&key.to_string()];
            assert!(!kr.fallback);
            assert_eq!(kr.chosen_lambda, Some(1e-8));
            assert_eq!(kr.rows_used, 40);
        }
        assert!(outcome.report.warnings.is_empty());
    }

    #[test]
    fn missing_keys_fall_back_with_warnings() {
        let words = tiny_words();
        let set = parse_set("a_JJ b_NN\tt\t1.0\na_JJ b_NN\tt\t1.0\n").unwrap();
        let cfg = TrainConfig {
            grid: vec![1e-2],
            ..TrainConfig::default()
        };
        let outcome = train_model(ModelVariant::Concat, &set, &words, &cfg).unwrap();
        // Five keys had no data and warn; JJ-NN trains (singleton grid
        // avoids the rows < folds path).
        let fallbacks: Vec<&String> = outcome
            .report
            .keys
            .iter()
            .filter(|(_, v)| v.fallback)
            .map(|(k, _)| k)
            .collect();
        assert_eq!(fallbacks.len(), 5);
        assert_eq!(outcome.report.warnings.len(), 5);
        assert!(!outcome.report.keys["JJ-NN"].fallback);
        // Fallback blocks behave like addition.
        let params = match &outcome.model {
            CompositionModel::Concat(p) => p,
            _ => unreachable!(),
        };
        let x = ndarray::array![1.0, 2.0];
        let y = ndarray::array![10.0, 20.0];
        let z = CompositionModel::Concat(params.clone())
            .compose_pair(x.view(), y.view(), PosPairKey::VbVb)
            .unwrap();
        assert_abs_diff_eq!(z[0], 11.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], 22.0, epsilon = 1e-12);
    }

    #[test]
    fn tensor_training_recovers_a_planted_tensor() {
        // One key with data is enough to exercise the reshape path.
        let n = 3;
        let mut rng = ChaCha20Rng::seed_from_u64(60);
        let truth = Array3::from_shape_fn((n, n, n), |_| rng.random::<f64>() - 0.5);
        let mut entries = Vec::new();
        let mut pairs = Vec::new();
        for i in 0..60 {
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut t = vec![0.0; n];
            for a in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        t[a] += truth[[a, j, k]] * x[j] * y[k];
                    }
                }
            }
            entries.push((format!("x{i}"), x));
            entries.push((format!("y{i}"), y));
            entries.push((format!("t{i}"), t));
            pairs.push(ParaphrasePair {
                left: TaggedWord::new(format!("x{i}"), CoarseTag::Nn),
                right: TaggedWord::new(format!("y{i}"), CoarseTag::Nn),
                target: format!("t{i}"),
                weight: 1.0,
            });
        }
        let words = EmbeddingTable::from_entries(n, entries).unwrap();
        let set = ParaphraseSet::from_pairs(pairs, SkipStats::default());
        let cfg = TrainConfig {
            grid: vec![1e-8],
            ..TrainConfig::default()
        };
        let outcome = train_model(ModelVariant::Tensor, &set, &words, &cfg).unwrap();
        let params = match &outcome.model {
            CompositionModel::Tensor(p) => p,
            other => panic!("expected tensor, got {}", other.variant_name()),
        };
        let diff = params.block(PosPairKey::NnNn) - &truth;
        let rel = diff.iter().map(|v| v * v).sum::<f64>().sqrt()
            / truth.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(rel < 1e-4, "relative error {rel}");
        // Untrained keys behave like elementwise multiplication.
        let x = ndarray::array![2.0, 3.0, 4.0];
        let y = ndarray::array![5.0, 6.0, 7.0];
        let z = outcome
            .model
            .compose_pair(x.view(), y.view(), PosPairKey::RbJj)
            .unwrap();
        assert_abs_diff_eq!(z[0], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1], 18.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[2], 28.0, epsilon = 1e-12);
    }

    #[test]
    fn mult2_closed_form_recovers_planted_scale() {
        let n = 4;
        let scale_truth = [0.5, -1.25, 2.0, 0.0];
        let mut rng = ChaCha20Rng::seed_from_u64(70);
        let mut entries = Vec::new();
        let mut pairs = Vec::new();
        for i in 0..30 {
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.5).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.5).collect();
            let t: Vec<f64> = (0..n).map(|d| scale_truth[d] * x[d] * y[d]).collect();
            entries.push((format!("x{i}"), x));
            entries.push((format!("y{i}"), y));
            entries.push((format!("t{i}"), t));
            pairs.push(ParaphrasePair {
                left: TaggedWord::new(format!("x{i}"), CoarseTag::Nn),
                right: TaggedWord::new(format!("y{i}"), CoarseTag::Nn),
                target: format!("t{i}"),
                weight: 1.0,
            });
        }
        let words = EmbeddingTable::from_entries(n, entries).unwrap();
        let set = ParaphraseSet::from_pairs(pairs, SkipStats::default());
        let outcome = train_model(
            ModelVariant::Mult2,
            &set,
            &words,
            &TrainConfig::default(),
        )
        .unwrap();
        let scale = match &outcome.model {
            CompositionModel::Mult2 { scale } => scale,
            other => panic!("expected mult2, got {}", other.variant_name()),
        };
        for d in 0..n {
            assert_abs_diff_eq!(scale[d], scale_truth[d], epsilon = 1e-9);
        }
        let m2 = outcome.report.mult2.as_ref().unwrap();
        assert_eq!(m2.rows_used, 30);
        assert!(m2.degenerate_dims.is_empty());
    }

    #[test]
    fn parameter_free_variants_train_trivially() {
        let words = tiny_words();
        let set = parse_set("a_JJ b_NN\tt\t1.0\n").unwrap();
        let cfg = TrainConfig::default();
        let add = train_model(ModelVariant::Add, &set, &words, &cfg).unwrap();
        assert_eq!(add.model, CompositionModel::Add);
        assert_eq!(add.report.variant, "add");
        let mult = train_model(ModelVariant::Mult1, &set, &words, &cfg).unwrap();
        assert_eq!(mult.model, CompositionModel::Mult1);
    }

    #[test]
    fn sparse_key_fits_without_cv_and_warns() {
        let words = tiny_words();
        let set = parse_set("a_JJ b_NN\tt\t1.0\na_JJ b_NN\tt\t1.0\n").unwrap();
        let cfg = TrainConfig {
            grid: vec![1e-4, 1e-2, 1e0],
            folds: 5,
            ..TrainConfig::default()
        };
        let outcome = train_model(ModelVariant::Concat, &set, &words, &cfg).unwrap();
        let kr = &outcome.report.keys["JJ-NN"];
        assert!(!kr.fallback);
        assert_eq!(kr.chosen_lambda, Some(1e-2));
        assert!(kr.cv.is_none());
        assert!(outcome
            .report
            .warnings
            .iter()
            .any(|w| w.contains("JJ-NN") && w.contains("without cross-validation")));
    }

    #[test]
    fn report_serializes_to_json() {
        let (set, words, _) = planted_concat_corpus(2, 10, 80);
        let cfg = TrainConfig {
            grid: vec![1e-6, 1e-2],
            folds: 2,
            ..TrainConfig::default()
        };
        let outcome = train_model(ModelVariant::Concat, &set, &words, &cfg).unwrap();
        let json = serde_json::to_string(&outcome.report).unwrap();
        assert!(json.contains("\"variant\":\"concat\""));
        assert!(json.contains("DT-NN"));
    }
}
