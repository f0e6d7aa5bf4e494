//! Plain-text word vector tables.
//!
//! The on-disk format is one header line `V N` (vocabulary size, dimension)
//! followed by one line per word: the word itself and `N` whitespace-separated
//! float values. Tables preserve insertion order, so every operation that
//! iterates the vocabulary (serialization, normalization constants in the
//! scorers) is deterministic for a given input file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

/// Norms below this threshold count as zero for normalization and cosine.
const NEAR_ZERO_NORM: f64 = 1e-12;

/// Errors raised while building or using an embedding table.
#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed header, expected \"<vocab_size> <dim>\"")]
    MalformedHeader { line: usize },
    #[error("line {line}: {word:?} has {found} values, expected {expected}")]
    WrongDimension {
        line: usize,
        word: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: cannot parse {token:?} as a number")]
    BadNumber { line: usize, token: String },
    #[error("line {line}: non-finite value in vector for {word:?}")]
    NonFinite { line: usize, word: String },
    #[error("entry {word:?} has {found} values, expected {expected}")]
    EntryDimension {
        word: String,
        expected: usize,
        found: usize,
    },
    #[error("entry {word:?} contains a non-finite value")]
    EntryNonFinite { word: String },
    #[error("duplicate entry {word:?}")]
    DuplicateEntry { word: String },
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("cannot normalize {word:?}: vector norm is zero")]
    ZeroNorm { word: String },
    #[error("cosine is undefined for a zero-norm vector")]
    ZeroNormOperand,
    #[error("vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

/// A word-to-vector table with insertion-order iteration.
///
/// The same type serves both the word table (phrase constituents and
/// paraphrase targets) and the context table used by the token-level scorer.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vocab: IndexMap<String, usize>,
    vectors: Array2<f64>,
    normalized: bool,
    duplicates_dropped: usize,
}

impl EmbeddingTable {
    /// Builds a table from `(word, vector)` entries.
    ///
    /// Unlike [`EmbeddingTable::load`], a duplicate word here is treated as a
    /// programming error rather than noisy input.
    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self, EmbedError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        if dim == 0 {
            return Err(EmbedError::ZeroDim);
        }
        let mut vocab = IndexMap::new();
        let mut data = Vec::new();
        for (word, values) in entries {
            let word = word.into();
            if values.len() != dim {
                return Err(EmbedError::EntryDimension {
                    word,
                    expected: dim,
                    found: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::EntryNonFinite { word });
            }
            let next = vocab.len();
            if vocab.insert(word.clone(), next).is_some() {
                return Err(EmbedError::DuplicateEntry { word });
            }
            data.extend_from_slice(&values);
        }
        let rows = vocab.len();
        let vectors = Array2::from_shape_vec((rows, dim), data)
            .expect("row count and dimension are consistent by construction");
        Ok(Self {
            dim,
            vocab,
            vectors,
            normalized: false,
            duplicates_dropped: 0,
        })
    }

    /// Reads a table from the plain-text format.
    ///
    /// The vocabulary count in the header is used only as a capacity hint;
    /// the actual number of data lines wins. A word that appears more than
    /// once keeps its first vector, and the number of dropped duplicates is
    /// reported by [`EmbeddingTable::duplicates_dropped`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        Self::read(BufReader::new(File::open(path)?))
    }

    /// Reads a table from any buffered reader; see [`EmbeddingTable::load`].
    pub fn read<R: BufRead>(reader: R) -> Result<Self, EmbedError> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or(EmbedError::MalformedHeader { line: 1 })??;
        let mut parts = header.split_whitespace();
        let hint: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or(EmbedError::MalformedHeader { line: 1 })?;
        let dim: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or(EmbedError::MalformedHeader { line: 1 })?;
        if parts.next().is_some() || dim == 0 {
            return Err(EmbedError::MalformedHeader { line: 1 });
        }

        let mut vocab: IndexMap<String, usize> = IndexMap::with_capacity(hint);
        let mut data = Vec::with_capacity(hint * dim);
        let mut duplicates_dropped = 0;
        let mut row = Vec::with_capacity(dim);
        for (idx, line) in lines.enumerate() {
            let line = line?;
            let lineno = idx + 2;
            let mut tokens = line.split_whitespace();
            let word = match tokens.next() {
                Some(w) => w,
                None => continue, // blank line
            };
            row.clear();
            for token in tokens {
                let value: f64 = token.parse().map_err(|_| EmbedError::BadNumber {
                    line: lineno,
                    token: token.to_string(),
                })?;
                row.push(value);
            }
            if row.len() != dim {
                return Err(EmbedError::WrongDimension {
                    line: lineno,
                    word: word.to_string(),
                    expected: dim,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::NonFinite {
                    line: lineno,
                    word: word.to_string(),
                });
            }
            if vocab.contains_key(word) {
                duplicates_dropped += 1;
                continue;
            }
            vocab.insert(word.to_string(), vocab.len());
            data.extend_from_slice(&row);
        }
        let rows = vocab.len();
        let vectors = Array2::from_shape_vec((rows, dim), data)
            .expect("row count and dimension are consistent by construction");
        Ok(Self {
            dim,
            vocab,
            vectors,
            normalized: false,
            duplicates_dropped,
        })
    }

    /// Writes the table in the same plain-text format that `load` accepts.
    ///
    /// Values are printed with Rust's shortest round-trip float formatting,
    /// so `save` followed by `load` reproduces the table exactly.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)?;
        Ok(())
    }

    /// Writes the table to any writer; see [`EmbeddingTable::save`].
    pub fn write<W: Write>(&self, out: &mut W) -> Result<(), EmbedError> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (word, vector) in self.iter() {
            write!(out, "{word}")?;
            for value in vector {
                write!(out, " {value}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Embedding dimension `N`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of words in the table.
    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    /// Number of duplicate lines dropped while loading (first occurrence wins).
    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    /// Whether `unit_normalize` has been applied.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vocab.contains_key(word)
    }

    /// Looks up the vector for `word`, if present.
    pub fn get(&self, word: &str) -> Option<ArrayView1<'_, f64>> {
        self.vocab.get(word).map(|&row| self.vectors.row(row))
    }

    /// Iterates `(word, vector)` pairs in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, ArrayView1<'_, f64>)> {
        self.vocab
            .keys()
            .enumerate()
            .map(|(row, word)| (word.as_str(), self.vectors.row(row)))
    }

    /// Scales every vector to unit Euclidean norm, in place.
    ///
    /// Fails without modifying the table if any vector has (near-)zero norm,
    /// naming the offending word.
    pub fn unit_normalize(&mut self) -> Result<(), EmbedError> {
        let mut norms = Array1::zeros(self.len());
        for (row, (word, vector)) in self.iter().enumerate() {
            let norm = vector.dot(&vector).sqrt();
            if norm < NEAR_ZERO_NORM {
                return Err(EmbedError::ZeroNorm {
                    word: word.to_string(),
                });
            }
            norms[row] = norm;
        }
        for (mut row, norm) in self.vectors.rows_mut().into_iter().zip(norms.iter()) {
            row.mapv_inplace(|v| v / norm);
        }
        self.normalized = true;
        Ok(())
    }
}

/// Cosine similarity between two vectors, clamped to `[-1, 1]`.
pub fn cosine(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu < NEAR_ZERO_NORM || nv < NEAR_ZERO_NORM {
        return Err(EmbedError::ZeroNormOperand);
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}
