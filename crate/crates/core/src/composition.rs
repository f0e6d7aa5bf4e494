//! Composition functions and the structures they dispatch on.
//!
//! A two-word phrase is composed by one of five functions: vector addition,
//! elementwise multiplication (unscaled or with a learned per-dimension
//! scale), a learned matrix applied to the concatenated pair, or a learned
//! order-3 tensor contracted with both vectors. The parametric functions
//! (matrix and tensor) keep one parameter block per coarse POS-pair key, so
//! that e.g. determiner–noun and verb–verb pairs compose differently.
//!
//! Phrases longer than two words are composed bottom-up over a
//! left-branching binary tree whose internal nodes carry coarse labels; the
//! label pair of a node's children selects the parameter block used at that
//! node.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use ndarray::{concatenate, Array1, Array2, Array3, ArrayView1, Axis};
use thiserror::Error;

use crate::embeddings::EmbeddingTable;

/// Errors raised while parsing tagged text or composing vectors.
#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("token {token:?} is not of the form word_TAG")]
    UntaggedToken { token: String },
    #[error("phrase has {found} word(s); composition needs at least 2")]
    TooShort { found: usize },
    #[error("constituent vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("input dimension {found} does not match model dimension {expected}")]
    ModelDim { expected: usize, found: usize },
    #[error("out-of-vocabulary words: {}", words.join(", "))]
    MissingWords { words: Vec<String> },
    #[error("parameter block {key} has shape {found}, expected {expected}")]
    BlockShape {
        key: PosPairKey,
        expected: String,
        found: String,
    },
    #[error("parameter block {key} contains a non-finite value")]
    NonFiniteBlock { key: PosPairKey },
    #[error("model dimension must be positive")]
    ZeroDim,
}

/// Coarse part-of-speech label, collapsed from a Penn treebank tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CoarseTag {
    Dt,
    Nn,
    Jj,
    Vb,
    Rb,
    Other,
}

impl CoarseTag {
    /// Collapses a Penn treebank tag: `NN*`, `JJ*`, `VB*`, `RB*` map to
    /// their two-letter class, `DT` (exactly) stays `DT`, everything else
    /// becomes `OTHER`.
    pub fn from_penn(tag: &str) -> Self {
        if tag == "DT" {
            CoarseTag::Dt
        } else if tag.starts_with("NN") {
            CoarseTag::Nn
        } else if tag.starts_with("JJ") {
            CoarseTag::Jj
        } else if tag.starts_with("VB") {
            CoarseTag::Vb
        } else if tag.starts_with("RB") {
            CoarseTag::Rb
        } else {
            CoarseTag::Other
        }
    }
}

impl fmt::Display for CoarseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CoarseTag::Dt => "DT",
            CoarseTag::Nn => "NN",
            CoarseTag::Jj => "JJ",
            CoarseTag::Vb => "VB",
            CoarseTag::Rb => "RB",
            CoarseTag::Other => "OTHER",
        };
        f.write_str(name)
    }
}

/// A word paired with its coarse tag, parsed from `word_TAG` tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedWord {
    pub word: String,
    pub tag: CoarseTag,
}

impl TaggedWord {
    pub fn new(word: impl Into<String>, tag: CoarseTag) -> Self {
        Self {
            word: word.into(),
            tag,
        }
    }

    /// Parses a `word_TAG` token, splitting at the last underscore so words
    /// containing underscores survive. The tag may be a fine Penn tag; it is
    /// collapsed with [`CoarseTag::from_penn`].
    pub fn parse(token: &str) -> Result<Self, ComposeError> {
        match token.rsplit_once('_') {
            Some((word, tag)) if !word.is_empty() && !tag.is_empty() => {
                Ok(Self::new(word, CoarseTag::from_penn(tag)))
            }
            _ => Err(ComposeError::UntaggedToken {
                token: token.to_string(),
            }),
        }
    }

    /// Parses a whitespace-separated sequence of `word_TAG` tokens.
    pub fn parse_sequence(text: &str) -> Result<Vec<Self>, ComposeError> {
        text.split_whitespace().map(Self::parse).collect()
    }
}

/// The POS-pair key a composition step dispatches on.
///
/// Five frequent pair types get dedicated parameters; every other label
/// combination shares the `OTHER` block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PosPairKey {
    DtNn,
    NnNn,
    JjNn,
    VbVb,
    RbJj,
    Other,
}

impl PosPairKey {
    /// All keys, in the fixed order used for parameter storage and
    /// serialization.
    pub const ALL: [PosPairKey; 6] = [
        PosPairKey::DtNn,
        PosPairKey::NnNn,
        PosPairKey::JjNn,
        PosPairKey::VbVb,
        PosPairKey::RbJj,
        PosPairKey::Other,
    ];

    /// Maps the coarse labels of a (left, right) pair to its key.
    pub fn from_labels(left: CoarseTag, right: CoarseTag) -> Self {
        match (left, right) {
            (CoarseTag::Dt, CoarseTag::Nn) => PosPairKey::DtNn,
            (CoarseTag::Nn, CoarseTag::Nn) => PosPairKey::NnNn,
            (CoarseTag::Jj, CoarseTag::Nn) => PosPairKey::JjNn,
            (CoarseTag::Vb, CoarseTag::Vb) => PosPairKey::VbVb,
            (CoarseTag::Rb, CoarseTag::Jj) => PosPairKey::RbJj,
            _ => PosPairKey::Other,
        }
    }

    /// Stable index into per-key storage; follows the order of `ALL`.
    pub fn index(self) -> usize {
        match self {
            PosPairKey::DtNn => 0,
            PosPairKey::NnNn => 1,
            PosPairKey::JjNn => 2,
            PosPairKey::VbVb => 3,
            PosPairKey::RbJj => 4,
            PosPairKey::Other => 5,
        }
    }
}

impl fmt::Display for PosPairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PosPairKey::DtNn => "DT-NN",
            PosPairKey::NnNn => "NN-NN",
            PosPairKey::JjNn => "JJ-NN",
            PosPairKey::VbVb => "VB-VB",
            PosPairKey::RbJj => "RB-JJ",
            PosPairKey::Other => "OTHER",
        };
        f.write_str(name)
    }
}

impl FromStr for PosPairKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "DT-NN" => Ok(PosPairKey::DtNn),
            "NN-NN" => Ok(PosPairKey::NnNn),
            "JJ-NN" => Ok(PosPairKey::JjNn),
            "VB-VB" => Ok(PosPairKey::VbVb),
            "RB-JJ" => Ok(PosPairKey::RbJj),
            "OTHER" => Ok(PosPairKey::Other),
            other => Err(format!("unknown POS-pair key {other:?}")),
        }
    }
}

/// One value of type `T` per [`PosPairKey`], with deterministic iteration in
/// the order of [`PosPairKey::ALL`].
#[derive(Debug, Clone, PartialEq)]
pub struct PerKey<T> {
    items: [T; 6],
}

impl<T> PerKey<T> {
    pub fn from_fn(mut f: impl FnMut(PosPairKey) -> T) -> Self {
        Self {
            items: PosPairKey::ALL.map(&mut f),
        }
    }

    pub fn get(&self, key: PosPairKey) -> &T {
        &self.items[key.index()]
    }

    pub fn get_mut(&mut self, key: PosPairKey) -> &mut T {
        &mut self.items[key.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (PosPairKey, &T)> {
        PosPairKey::ALL.iter().map(move |&k| (k, self.get(k)))
    }
}

impl<T> Index<PosPairKey> for PerKey<T> {
    type Output = T;

    fn index(&self, key: PosPairKey) -> &T {
        self.get(key)
    }
}

impl<T> IndexMut<PosPairKey> for PerKey<T> {
    fn index_mut(&mut self, key: PosPairKey) -> &mut T {
        self.get_mut(key)
    }
}

/// Per-key `N x 2N` matrices for the concatenation model.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatParams {
    dim: usize,
    blocks: PerKey<Array2<f64>>,
}

impl ConcatParams {
    /// Validates that every block is a finite `N x 2N` matrix with a shared
    /// `N`. Blocks are stored in standard (row-major) layout regardless of
    /// how the caller built them, so downstream code can rely on it.
    pub fn new(mut blocks: PerKey<Array2<f64>>) -> Result<Self, ComposeError> {
        let dim = blocks[PosPairKey::DtNn].nrows();
        if dim == 0 {
            return Err(ComposeError::ZeroDim);
        }
        for (key, block) in blocks.iter() {
            if block.nrows() != dim || block.ncols() != 2 * dim {
                return Err(ComposeError::BlockShape {
                    key,
                    expected: format!("{}x{}", dim, 2 * dim),
                    found: format!("{}x{}", block.nrows(), block.ncols()),
                });
            }
            if block.iter().any(|v| !v.is_finite()) {
                return Err(ComposeError::NonFiniteBlock { key });
            }
        }
        for &key in &PosPairKey::ALL {
            let block = &mut blocks[key];
            if !block.is_standard_layout() {
                let fixed = block.as_standard_layout().into_owned();
                *block = fixed;
            }
        }
        Ok(Self { dim, blocks })
    }

    /// `[I | I]` for every key, which makes the model equal to addition.
    pub fn identity(dim: usize) -> Self {
        let block = {
            let mut w = Array2::zeros((dim, 2 * dim));
            for i in 0..dim {
                w[[i, i]] = 1.0;
                w[[i, dim + i]] = 1.0;
            }
            w
        };
        Self {
            dim,
            blocks: PerKey::from_fn(|_| block.clone()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, key: PosPairKey) -> &Array2<f64> {
        &self.blocks[key]
    }
}

/// Per-key `N x N x N` tensors for the tensor model.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorParams {
    dim: usize,
    blocks: PerKey<Array3<f64>>,
}

impl TensorParams {
    /// Validates that every block is a finite `N x N x N` tensor with a
    /// shared `N`. Blocks are stored in standard (row-major) layout
    /// regardless of how the caller built them, so downstream code can rely
    /// on it.
    pub fn new(mut blocks: PerKey<Array3<f64>>) -> Result<Self, ComposeError> {
        let dim = blocks[PosPairKey::DtNn].shape()[0];
        if dim == 0 {
            return Err(ComposeError::ZeroDim);
        }
        for (key, block) in blocks.iter() {
            if block.shape() != [dim, dim, dim] {
                return Err(ComposeError::BlockShape {
                    key,
                    expected: format!("{dim}x{dim}x{dim}"),
                    found: block
                        .shape()
                        .iter()
                        .map(|d| d.to_string())
                        .collect::<Vec<_>>()
                        .join("x"),
                });
            }
            if block.iter().any(|v| !v.is_finite()) {
                return Err(ComposeError::NonFiniteBlock { key });
            }
        }
        for &key in &PosPairKey::ALL {
            let block = &mut blocks[key];
            if !block.is_standard_layout() {
                let fixed = block.as_standard_layout().into_owned();
                *block = fixed;
            }
        }
        Ok(Self { dim, blocks })
    }

    /// `W[i][i][i] = 1` for every key, which makes the model equal to
    /// elementwise multiplication.
    pub fn diagonal(dim: usize) -> Self {
        let block = {
            let mut w = Array3::zeros((dim, dim, dim));
            for i in 0..dim {
                w[[i, i, i]] = 1.0;
            }
            w
        };
        Self {
            dim,
            blocks: PerKey::from_fn(|_| block.clone()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, key: PosPairKey) -> &Array3<f64> {
        &self.blocks[key]
    }
}

/// A composition function for two constituent vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum CompositionModel {
    /// `f(x, y) = x + y`
    Add,
    /// `f(x, y)[i] = x[i] * y[i]`
    Mult1,
    /// `f(x, y)[i] = scale[i] * x[i] * y[i]` with a learned scale vector
    /// shared across keys.
    Mult2 { scale: Array1<f64> },
    /// `f(x, y) = W_key [x; y]` with a learned matrix per key.
    Concat(ConcatParams),
    /// `f(x, y)[i] = sum_jk W_key[i][j][k] x[j] y[k]` with a learned tensor
    /// per key.
    Tensor(TensorParams),
}

impl CompositionModel {
    /// Short lowercase name used in the container format and CLI.
    pub fn variant_name(&self) -> &'static str {
        match self {
            CompositionModel::Add => "add",
            CompositionModel::Mult1 => "mult1",
            CompositionModel::Mult2 { .. } => "mult2",
            CompositionModel::Concat(_) => "concat",
            CompositionModel::Tensor(_) => "tensor",
        }
    }

    /// Embedding dimension the model is bound to, if it has parameters.
    pub fn dim(&self) -> Option<usize> {
        match self {
            CompositionModel::Add | CompositionModel::Mult1 => None,
            CompositionModel::Mult2 { scale } => Some(scale.len()),
            CompositionModel::Concat(p) => Some(p.dim()),
            CompositionModel::Tensor(p) => Some(p.dim()),
        }
    }

    /// Composes one constituent pair under the parameters for `key`.
    pub fn compose_pair(
        &self,
        x: ArrayView1<'_, f64>,
        y: ArrayView1<'_, f64>,
        key: PosPairKey,
    ) -> Result<Array1<f64>, ComposeError> {
        if x.len() != y.len() {
            return Err(ComposeError::LengthMismatch {
                left: x.len(),
                right: y.len(),
            });
        }
        if let Some(dim) = self.dim() {
            if x.len() != dim {
                return Err(ComposeError::ModelDim {
                    expected: dim,
                    found: x.len(),
                });
            }
        }
        let z = match self {
            CompositionModel::Add => &x + &y,
            CompositionModel::Mult1 => &x * &y,
            CompositionModel::Mult2 { scale } => scale * &(&x * &y),
            CompositionModel::Concat(params) => {
                let xy = concatenate(Axis(0), &[x, y])
                    .expect("two 1-d views always concatenate");
                params.block(key).dot(&xy)
            }
            CompositionModel::Tensor(params) => {
                let n = x.len();
                let w = params
                    .block(key)
                    .as_slice()
                    .expect("tensor blocks are stored in standard layout");
                let mut out = Array1::zeros(n);
                for i in 0..n {
                    let plane = &w[i * n * n..(i + 1) * n * n];
                    let mut acc = 0.0;
                    for j in 0..n {
                        let xj = x[j];
                        if xj == 0.0 {
                            continue;
                        }
                        let row = &plane[j * n..(j + 1) * n];
                        let mut inner = 0.0;
                        for (wk, yk) in row.iter().zip(y.iter()) {
                            inner += wk * yk;
                        }
                        acc += xj * inner;
                    }
                    out[i] = acc;
                }
                out
            }
        };
        Ok(z)
    }

    /// Composes a whole phrase bottom-up over its tree.
    ///
    /// Fails with the full list of out-of-vocabulary leaves before touching
    /// any arithmetic.
    pub fn compose_phrase(
        &self,
        tree: &PhraseTree,
        words: &EmbeddingTable,
    ) -> Result<Array1<f64>, ComposeError> {
        let missing: Vec<String> = tree
            .leaves()
            .filter(|(word, _)| !words.contains(word))
            .map(|(word, _)| word.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(ComposeError::MissingWords { words: missing });
        }
        self.eval_node(&tree.root, words)
    }

    /// Convenience: builds the left-branching tree for `tokens` and composes
    /// it.
    pub fn compose_tokens(
        &self,
        tokens: &[TaggedWord],
        words: &EmbeddingTable,
    ) -> Result<Array1<f64>, ComposeError> {
        let tree = PhraseTree::build(tokens)?;
        self.compose_phrase(&tree, words)
    }

    fn eval_node(
        &self,
        node: &TreeNode,
        words: &EmbeddingTable,
    ) -> Result<Array1<f64>, ComposeError> {
        match node {
            TreeNode::Leaf { word, .. } => Ok(words
                .get(word)
                .expect("leaves were checked against the vocabulary")
                .to_owned()),
            TreeNode::Internal { left, right, .. } => {
                let x = self.eval_node(left, words)?;
                let y = self.eval_node(right, words)?;
                let key = PosPairKey::from_labels(left.label(), right.label());
                self.compose_pair(x.view(), y.view(), key)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TreeNode {
    Leaf {
        word: String,
        tag: CoarseTag,
    },
    Internal {
        label: CoarseTag,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn label(&self) -> CoarseTag {
        match self {
            TreeNode::Leaf { tag, .. } => *tag,
            TreeNode::Internal { label, .. } => *label,
        }
    }
}

/// Left-branching binary tree over a tagged phrase: `((w1 w2) w3) ...`.
///
/// An internal node is labeled `NN` when its right child is `NN` and its
/// left child is one of `DT`, `JJ`, `NN` (a noun phrase keeps its nominal
/// head); every other combination is labeled `OTHER`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseTree {
    root: TreeNode,
    len: usize,
}

impl PhraseTree {
    /// Builds the tree for a phrase of at least two tagged words.
    pub fn build(tokens: &[TaggedWord]) -> Result<Self, ComposeError> {
        if tokens.len() < 2 {
            return Err(ComposeError::TooShort {
                found: tokens.len(),
            });
        }
        let mut iter = tokens.iter();
        let first = iter.next().expect("length checked above");
        let mut node = TreeNode::Leaf {
            word: first.word.clone(),
            tag: first.tag,
        };
        for token in iter {
            let right = TreeNode::Leaf {
                word: token.word.clone(),
                tag: token.tag,
            };
            let label = internal_label(node.label(), right.label());
            node = TreeNode::Internal {
                label,
                left: Box::new(node),
                right: Box::new(right),
            };
        }
        Ok(Self {
            root: node,
            len: tokens.len(),
        })
    }

    /// Parses `word_TAG` tokens and builds the tree.
    pub fn parse(text: &str) -> Result<Self, ComposeError> {
        Self::build(&TaggedWord::parse_sequence(text)?)
    }

    /// Number of words in the phrase.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false // a tree always holds at least two words
    }

    /// Label of the root node.
    pub fn root_label(&self) -> CoarseTag {
        self.root.label()
    }

    /// Leaves in phrase order as `(word, tag)`.
    pub fn leaves(&self) -> impl Iterator<Item = (&str, CoarseTag)> {
        let mut out = Vec::with_capacity(self.len);
        collect_leaves(&self.root, &mut out);
        out.into_iter()
    }

    /// Labels of internal nodes, bottom-up (innermost pair first).
    pub fn internal_labels(&self) -> Vec<CoarseTag> {
        let mut out = Vec::with_capacity(self.len - 1);
        collect_internal(&self.root, &mut |left, right, label| {
            let _ = (left, right);
            out.push(label);
        });
        out
    }

    /// POS-pair keys of the composition steps, bottom-up.
    pub fn internal_keys(&self) -> Vec<PosPairKey> {
        let mut out = Vec::with_capacity(self.len - 1);
        collect_internal(&self.root, &mut |left, right, _| {
            out.push(PosPairKey::from_labels(left, right));
        });
        out
    }
}

fn internal_label(left: CoarseTag, right: CoarseTag) -> CoarseTag {
    if right == CoarseTag::Nn
        && matches!(left, CoarseTag::Dt | CoarseTag::Jj | CoarseTag::Nn)
    {
        CoarseTag::Nn
    } else {
        CoarseTag::Other
    }
}

fn collect_leaves<'a>(node: &'a TreeNode, out: &mut Vec<(&'a str, CoarseTag)>) {
    match node {
        TreeNode::Leaf { word, tag } => out.push((word, *tag)),
        TreeNode::Internal { left, right, .. } => {
            collect_leaves(left, out);
            collect_leaves(right, out);
        }
    }
}

fn collect_internal(node: &TreeNode, f: &mut impl FnMut(CoarseTag, CoarseTag, CoarseTag)) {
    if let TreeNode::Internal { label, left, right } = node {
        collect_internal(left, f);
        collect_internal(right, f);
        f(left.label(), right.label(), *label);
    }
}
