//! Token representations and mean-pooled component representations.
//!
//! Token vectors come either from a precomputed embedding table (one
//! matrix per document, e.g. exported from a pretrained language model)
//! or from a small trainable encoder: an embedding lookup followed by an
//! optional residual `relu(E·W + b)` mixing layer. Dropout is applied to
//! the token vectors before pooling.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::model::{Linear, LinearVars};
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::{ComponentSpan, Corpus, Document, Error, Result};

/// Token id reserved for out-of-vocabulary tokens.
pub const UNKNOWN_TOKEN: usize = 0;

/// Whether dropout is active. Training carries the randomness source.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Token-to-id table. Id 0 is the unknown token; known tokens start at 1.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocab {
    /// Collects the sorted set of tokens in `corpus`.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut set = alloc::collections::BTreeSet::new();
        for d in corpus.documents() {
            set.extend(d.tokens.iter().cloned());
        }
        Self::from_tokens(set.into_iter().collect())
    }

    /// `tokens[k]` receives id `k + 1`. Duplicates keep their first id.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut index = BTreeMap::new();
        for (k, t) in tokens.iter().enumerate() {
            index.entry(t.clone()).or_insert(k + 1);
        }
        Vocab { tokens, index }
    }

    /// Known tokens in id order (id `k + 1` at position `k`).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Embedding rows needed, including the unknown row.
    pub fn size(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNKNOWN_TOKEN)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Precomputed token matrices keyed by document id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<S> {
    dim: usize,
    docs: BTreeMap<String, Tensor<S>>,
}

impl<S: Real> EmbeddingTable<S> {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            docs: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, id: String, matrix: Tensor<S>) -> Result<()> {
        if matrix.cols() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "embedding matrix",
                expected: self.dim,
                found: matrix.cols(),
            });
        }
        self.docs.insert(id, matrix);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Tensor<S>> {
        self.docs.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.docs.iter()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// Where token representations come from.
pub enum EncoderSource<'a, S> {
    Toy(&'a Vocab),
    Precomputed(&'a EmbeddingTable<S>),
}

/// Encoder input for one document.
#[derive(Clone, Debug, PartialEq)]
pub enum EncoderInput<S> {
    TokenIds(Vec<usize>),
    Precomputed(Tensor<S>),
}

impl<S: Real> EncoderInput<S> {
    pub fn num_tokens(&self) -> usize {
        match self {
            EncoderInput::TokenIds(ids) => ids.len(),
            EncoderInput::Precomputed(t) => t.rows(),
        }
    }
}

/// A document paired with its encoder input.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDoc<S> {
    pub doc: Document,
    pub input: EncoderInput<S>,
}

impl<S: Real> PreparedDoc<S> {
    /// Resolves the encoder input of `doc`. Precomputed matrices longer
    /// than the (possibly truncated) document are cut to its token count.
    pub fn new(doc: Document, source: &EncoderSource<'_, S>, d_b: usize) -> Result<Self> {
        let input = match source {
            EncoderSource::Toy(vocab) => EncoderInput::TokenIds(vocab.encode(&doc.tokens)),
            EncoderSource::Precomputed(table) => {
                if table.dim() != d_b {
                    return Err(Error::DimensionMismatch {
                        what: "embedding table",
                        expected: d_b,
                        found: table.dim(),
                    });
                }
                let m = table
                    .get(&doc.id)
                    .ok_or_else(|| Error::MissingDocument(doc.id.clone()))?;
                let n = doc.tokens.len();
                if m.rows() < n {
                    return Err(Error::Validation {
                        doc: doc.id.clone(),
                        reason: alloc::format!("embedding has {} rows for {n} tokens", m.rows()),
                    });
                }
                let data = m.data()[..n * m.cols()].to_vec();
                EncoderInput::Precomputed(Tensor::new(n, m.cols(), data)?)
            }
        };
        Ok(PreparedDoc { doc, input })
    }

    pub fn prepare_all(corpus: &Corpus, source: &EncoderSource<'_, S>, d_b: usize) -> Result<Vec<Self>> {
        corpus
            .documents()
            .iter()
            .map(|d| Self::new(d.clone(), source, d_b))
            .collect()
    }
}

/// Trainable toy encoder: embedding table `[vocab x d_b]` and an optional
/// `d_b x d_b` mixing layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyEncoder<S> {
    pub embedding: Tensor<S>,
    pub mixing: Option<Linear<S>>,
}

#[derive(Clone, Copy, Debug)]
pub struct ToyEncoderVars {
    pub embedding: Var,
    pub mixing: Option<LinearVars>,
}

/// Inverted-dropout mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<S: Real>(rows: usize, cols: usize, rate: f64, rng: &mut dyn RngCore) -> Tensor<S> {
    let keep = S::of(1.0 / (1.0 - rate));
    Tensor::from_fn(
        rows,
        cols,
        |_, _| {
            if rng.gen::<f64>() < rate {
                S::zero()
            } else {
                keep
            }
        },
    )
}

/// Records the token matrix `H` for one document on `tape`.
pub fn encode<S: Real>(
    tape: &mut Tape<S>,
    encoder: Option<&ToyEncoderVars>,
    input: &EncoderInput<S>,
    d_b: usize,
    dropout: f64,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let h = match (input, encoder) {
        (EncoderInput::TokenIds(ids), Some(enc)) => {
            let e = tape.gather_rows(enc.embedding, ids.clone())?;
            match &enc.mixing {
                Some(mix) => {
                    let z = tape.matmul(e, mix.weight)?;
                    let z = tape.add_row(z, mix.bias)?;
                    let z = tape.relu(z)?;
                    tape.add(e, z)?
                }
                None => e,
            }
        }
        (EncoderInput::Precomputed(t), None) => tape.constant(t.clone()),
        (EncoderInput::TokenIds(_), None) => {
            return Err(Error::Config("token ids given but the model has no toy encoder".into()))
        }
        (EncoderInput::Precomputed(_), Some(_)) => {
            return Err(Error::Config(
                "precomputed embeddings given to a model with a toy encoder".into(),
            ))
        }
    };
    let (rows, cols) = tape.shape(h);
    if cols != d_b {
        return Err(Error::DimensionMismatch {
            what: "token representation",
            expected: d_b,
            found: cols,
        });
    }
    match mode {
        Mode::Train(rng) if dropout > 0.0 => {
            let mask = dropout_mask(rows, cols, dropout, &mut **rng);
            tape.mask(h, mask)
        }
        _ => Ok(h),
    }
}

/// Token matrix for one document, outside any training graph.
pub fn encode_tokens<S: Real>(
    input: &EncoderInput<S>,
    encoder: Option<&ToyEncoder<S>>,
    d_b: usize,
    dropout: f64,
    mode: &mut Mode<'_>,
) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let vars = encoder.map(|e| ToyEncoderVars {
        embedding: tape.constant(e.embedding.clone()),
        mixing: e.mixing.as_ref().map(|l| l.constants(&mut tape)),
    });
    let h = encode(&mut tape, vars.as_ref(), input, d_b, dropout, mode)?;
    Ok(tape.value(h).clone())
}

/// Row `i` is the mean of `h` rows `spans[i].start..=spans[i].end`.
pub fn pool_components<S: Real>(h: &Tensor<S>, spans: &[ComponentSpan]) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let x = tape.constant(h.clone());
    let pooled = tape.pool_spans(x, spans)?;
    Ok(tape.value(pooled).clone())
}
