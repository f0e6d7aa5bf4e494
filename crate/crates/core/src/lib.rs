//! Learned composition functions for multiword phrases over word embeddings.
//!
//! The crate covers the full pipeline:
//!
//! * [`embeddings`] — plain-text vector tables with deterministic iteration
//!   order, unit normalization, and cosine similarity.
//! * [`composition`] — composition functions (additive, multiplicative,
//!   concatenation-matrix, tensor) dispatched on coarse POS-pair keys, plus
//!   left-branching phrase trees for phrases longer than two words.
//! * [`model_io`] — a deterministic binary container for trained parameters.
//! * [`training`] / [`regression`] — supervised estimation of the parametric
//!   models from two-word-to-one-word paraphrase triples, with ridge and
//!   lasso penalties and k-fold cross-validation over the penalty weight.
//! * [`scoring`] — type-level (context-independent) and token-level
//!   (occurrence-in-context) compositionality scores.
//! * [`evalkit`] — correlation of model scores against human judgment
//!   datasets (phrase similarity and phrase compositionality).
//! * [`grammar`] — annotation of translation grammar rules with
//!   compositionality features.

pub mod composition;
pub mod embeddings;
pub mod evalkit;
pub mod grammar;
pub mod model_io;
pub mod regression;
pub mod scoring;
pub mod training;

pub use composition::{
    CoarseTag, ComposeError, CompositionModel, PhraseTree, PosPairKey, TaggedWord,
};
pub use embeddings::{cosine, EmbedError, EmbeddingTable};
