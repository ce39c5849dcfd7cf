//! Documents, label schemas and corpus-level invariants.

mod synthetic;

pub use synthetic::{generate_synthetic, RelationTypeRule, SyntheticConfig};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Reserved relation label meaning "no relation holds".
pub const NONE_LABEL: &str = "none";

/// Ordered label inventories. `ar_types[0]` is always [`NONE_LABEL`].
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "RawSchema", into = "RawSchema"))]
pub struct LabelSchema {
    ac_types: Vec<String>,
    ar_types: Vec<String>,
}

#[cfg(feature = "serde")]
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    ac_types: Vec<String>,
    ar_types: Vec<String>,
}

#[cfg(feature = "serde")]
impl TryFrom<RawSchema> for LabelSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        LabelSchema::new(raw.ac_types, raw.ar_types)
    }
}

#[cfg(feature = "serde")]
impl From<LabelSchema> for RawSchema {
    fn from(s: LabelSchema) -> Self {
        RawSchema {
            ac_types: s.ac_types,
            ar_types: s.ar_types,
        }
    }
}

impl LabelSchema {
    pub fn new(ac_types: Vec<String>, ar_types: Vec<String>) -> Result<Self> {
        if ac_types.is_empty() {
            return Err(Error::Schema("ac_types is empty".into()));
        }
        if ar_types.first().map(String::as_str) != Some(NONE_LABEL) {
            return Err(Error::Schema(alloc::format!("ar_types must start with {NONE_LABEL:?}")));
        }
        for (kind, list) in [("ac_types", &ac_types), ("ar_types", &ar_types)] {
            let unique: BTreeSet<&String> = list.iter().collect();
            if unique.len() != list.len() {
                return Err(Error::Schema(alloc::format!("{kind} contains duplicates")));
            }
        }
        Ok(LabelSchema { ac_types, ar_types })
    }

    /// Consumer debt collection comments: five proposition types, reason/evidence links.
    pub fn cdcp() -> Self {
        Self::from_strs(
            &["Reference", "Fact", "Testimony", "Value", "Policy"],
            &[NONE_LABEL, "reason", "evidence"],
        )
    }

    /// Persuasive essays: three component types, support/attack links.
    pub fn pe() -> Self {
        Self::from_strs(&["MajorClaim", "Claim", "Premise"], &[NONE_LABEL, "support", "attack"])
    }

    pub fn from_strs(ac: &[&str], ar: &[&str]) -> Self {
        Self::new(
            ac.iter().map(|s| s.to_string()).collect(),
            ar.iter().map(|s| s.to_string()).collect(),
        )
        .expect("built-in schema is valid")
    }

    pub fn ac_types(&self) -> &[String] {
        &self.ac_types
    }

    pub fn ar_types(&self) -> &[String] {
        &self.ar_types
    }

    pub fn num_ac_types(&self) -> usize {
        self.ac_types.len()
    }

    /// Relation classes including `none`.
    pub fn num_ar_types(&self) -> usize {
        self.ar_types.len()
    }

    pub fn ac_index(&self, name: &str) -> Result<usize> {
        self.ac_types
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| Error::UnknownLabel {
                kind: "AC",
                name: name.into(),
            })
    }

    pub fn ar_index(&self, name: &str) -> Result<usize> {
        self.ar_types
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| Error::UnknownLabel {
                kind: "AR",
                name: name.into(),
            })
    }
}

/// Inclusive token range of one argument component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentSpan {
    pub start: usize,
    pub end: usize,
}

impl ComponentSpan {
    pub fn new(start: usize, end: usize) -> Self {
        ComponentSpan { start, end }
    }

    /// Number of tokens covered.
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// One argumentative text with its components and gold labels.
///
/// `ac_labels` is empty for unlabeled documents (prediction input).
/// Relation pairs absent from `ar_labels` are `none`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub spans: Vec<ComponentSpan>,
    pub ac_labels: Vec<usize>,
    pub ar_labels: BTreeMap<(usize, usize), usize>,
}

/// What truncation removed from one document.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Truncation {
    pub tokens: usize,
    pub components: usize,
    pub relations: usize,
}

impl Truncation {
    pub fn is_empty(&self) -> bool {
        *self == Truncation::default()
    }

    pub fn merge(&mut self, other: Truncation) {
        self.tokens += other.tokens;
        self.components += other.components;
        self.relations += other.relations;
    }
}

impl Document {
    pub fn num_components(&self) -> usize {
        self.spans.len()
    }

    pub fn is_labeled(&self) -> bool {
        !self.spans.is_empty() && self.ac_labels.len() == self.spans.len()
    }

    /// Gold relation class for an ordered pair.
    pub fn ar_label(&self, i: usize, j: usize) -> usize {
        self.ar_labels.get(&(i, j)).copied().unwrap_or(0)
    }

    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::Validation {
            doc: self.id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks every document invariant against `schema`. Unlabeled documents
    /// (empty `ac_labels`, no relations) pass when `require_labels` is false.
    pub fn validate(&self, schema: &LabelSchema, require_labels: bool) -> Result<()> {
        if self.spans.is_empty() {
            return Err(self.invalid("document has no components"));
        }
        let n = self.tokens.len();
        let mut prev_end: Option<usize> = None;
        for (k, s) in self.spans.iter().enumerate() {
            if s.start > s.end {
                return Err(self.invalid(alloc::format!("span {k} has start > end")));
            }
            if s.end >= n {
                return Err(self.invalid(alloc::format!(
                    "span {k} ends at token {} but the document has {n} tokens",
                    s.end
                )));
            }
            if prev_end.is_some_and(|p| s.start <= p) {
                return Err(self.invalid(alloc::format!("span {k} overlaps or precedes the previous span")));
            }
            prev_end = Some(s.end);
        }
        let m = self.spans.len();
        if self.ac_labels.is_empty() && !require_labels {
            if !self.ar_labels.is_empty() {
                return Err(self.invalid("relations given without component labels"));
            }
            return Ok(());
        }
        if self.ac_labels.len() != m {
            return Err(self.invalid(alloc::format!(
                "{} component labels for {m} spans",
                self.ac_labels.len()
            )));
        }
        if let Some(&bad) = self.ac_labels.iter().find(|&&l| l >= schema.num_ac_types()) {
            return Err(self.invalid(alloc::format!("AC label index {bad} out of range")));
        }
        for (&(i, j), &t) in &self.ar_labels {
            if i == j {
                return Err(self.invalid(alloc::format!("self-relation on component {i}")));
            }
            if i >= m || j >= m {
                return Err(self.invalid(alloc::format!("relation ({i}, {j}) references a missing component")));
            }
            if t == 0 || t >= schema.num_ar_types() {
                return Err(self.invalid(alloc::format!("relation ({i}, {j}) has invalid type index {t}")));
            }
        }
        Ok(())
    }

    /// Cuts the document to `max_len` tokens, dropping components that do
    /// not fit entirely and every relation touching a dropped component.
    pub fn truncated(&self, max_len: usize) -> (Document, Truncation) {
        if self.tokens.len() <= max_len {
            return (self.clone(), Truncation::default());
        }
        let kept = self.spans.iter().take_while(|s| s.end < max_len).count();
        let ar_labels: BTreeMap<_, _> = self
            .ar_labels
            .iter()
            .filter(|(&(i, j), _)| i < kept && j < kept)
            .map(|(&k, &v)| (k, v))
            .collect();
        let stats = Truncation {
            tokens: self.tokens.len() - max_len,
            components: self.spans.len() - kept,
            relations: self.ar_labels.len() - ar_labels.len(),
        };
        let doc = Document {
            id: self.id.clone(),
            tokens: self.tokens[..max_len].to_vec(),
            spans: self.spans[..kept].to_vec(),
            ac_labels: self.ac_labels.iter().take(kept).copied().collect(),
            ar_labels,
        };
        (doc, stats)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// A validated set of documents sharing one schema. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    schema: LabelSchema,
    documents: Vec<Document>,
    split: Split,
}

impl Corpus {
    pub fn new(schema: LabelSchema, documents: Vec<Document>, split: Split) -> Result<Self> {
        Self::build(schema, documents, split, true)
    }

    /// Like [`Corpus::new`] but admits documents without gold labels.
    pub fn new_unlabeled(schema: LabelSchema, documents: Vec<Document>, split: Split) -> Result<Self> {
        Self::build(schema, documents, split, false)
    }

    fn build(schema: LabelSchema, documents: Vec<Document>, split: Split, require_labels: bool) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for doc in &documents {
            doc.validate(&schema, require_labels)?;
            if !seen.insert(doc.id.as_str()) {
                return Err(doc.invalid("duplicate document id"));
            }
        }
        Ok(Corpus {
            schema,
            documents,
            split,
        })
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.documents.iter().all(Document::is_labeled)
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Applies [`Document::truncated`] to every document.
    pub fn truncated(&self, max_len: usize) -> (Corpus, Truncation) {
        let mut total = Truncation::default();
        let documents = self
            .documents
            .iter()
            .map(|d| {
                let (doc, t) = d.truncated(max_len);
                total.merge(t);
                doc
            })
            .collect();
        let corpus = Corpus {
            schema: self.schema.clone(),
            documents,
            split: self.split,
        };
        (corpus, total)
    }

    /// Seeded random split: roughly `fraction` of the documents (at least
    /// one, at most all but one) become the dev corpus. Order is preserved
    /// within each part.
    pub fn split_off_dev(&self, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
        if !(0.0..1.0).contains(&fraction) || self.documents.len() < 2 {
            return Err(Error::Config(alloc::format!(
                "cannot carve a {fraction} dev split from {} documents",
                self.documents.len()
            )));
        }
        let n = self.documents.len();
        let n_dev = (Float::round(n as f64 * fraction) as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let dev_ids: BTreeSet<usize> = order[..n_dev].iter().copied().collect();
        let (mut train, mut dev) = (Vec::new(), Vec::new());
        for (k, d) in self.documents.iter().enumerate() {
            if dev_ids.contains(&k) {
                dev.push(d.clone());
            } else {
                train.push(d.clone());
            }
        }
        Ok((
            Corpus {
                schema: self.schema.clone(),
                documents: train,
                split: Split::Train,
            },
            Corpus {
                schema: self.schema.clone(),
                documents: dev,
                split: Split::Dev,
            },
        ))
    }
}

/// All ordered pairs `(i, j)` with `i != j`, lexicographically.
pub fn enumerate_pairs(m: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(m * m.saturating_sub(1));
    for i in 0..m {
        for j in 0..m {
            if i != j {
                pairs.push((i, j));
            }
        }
    }
    pairs
}
