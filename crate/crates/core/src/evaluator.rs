//! Macro and per-class F1 for component typing (ACTC), relation
//! identification (ARI) and relation typing (ARTC).
//!
//! Decisions are pooled across documents before counting. A class with no
//! gold and no predicted instances scores F1 = 0.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::enumerate_pairs;
use crate::relation::PredictionGraph;
use crate::{Corpus, Document, Error, LabelSchema, Result};

/// ARI class names, in report order.
pub const ARI_CLASSES: [&str; 2] = ["relation", "non-relation"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassCounts {
    /// `2PR / (P + R)`, zero when precision and recall are both zero or undefined.
    pub fn f1(&self) -> f64 {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 of one class over aligned gold/predicted label lists.
pub fn f1_per_class(gold: &[usize], pred: &[usize], class: usize) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} gold labels vs {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let mut c = ClassCounts::default();
    for (&g, &p) in gold.iter().zip(pred) {
        match (g == class, p == class) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c.f1())
}

/// Unweighted mean of per-class F1 over `classes`.
pub fn macro_f1(gold: &[usize], pred: &[usize], classes: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &c in classes {
        total += f1_per_class(gold, pred, c)?;
    }
    Ok(if classes.is_empty() {
        0.0
    } else {
        total / classes.len() as f64
    })
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskScores {
    pub macro_f1: f64,
    /// `(class name, F1)` in report order.
    pub per_class: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub actc: TaskScores,
    pub ari: TaskScores,
    pub artc: TaskScores,
    /// Mean of the three macro F1 values.
    pub avg: f64,
}

/// Which pairs relation typing is scored on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ArtcScope {
    /// Gold relations only; the prediction is the type-given-existence decision.
    #[default]
    GoldRelations,
    /// Gold or predicted relations; a missed or spurious relation counts as `none`.
    EndToEnd,
}

/// Streaming per-class counters, merged document by document.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    schema: LabelSchema,
    scope: ArtcScope,
    actc: Vec<ClassCounts>,
    /// Index 0 = relation, 1 = non-relation.
    ari: [ClassCounts; 2],
    /// Indexed by relation type; index 0 (`none`) is never reported.
    artc: Vec<ClassCounts>,
    pairs_seen: u64,
}

fn tally(counts: &mut [ClassCounts], gold: usize, pred: usize) {
    if gold == pred {
        counts[gold].tp += 1;
    } else {
        counts[gold].fn_ += 1;
        counts[pred].fp += 1;
    }
}

impl MetricsAccumulator {
    pub fn new(schema: &LabelSchema, scope: ArtcScope) -> Self {
        MetricsAccumulator {
            schema: schema.clone(),
            scope,
            actc: vec![ClassCounts::default(); schema.num_ac_types()],
            ari: [ClassCounts::default(); 2],
            artc: vec![ClassCounts::default(); schema.num_ar_types()],
            pairs_seen: 0,
        }
    }

    /// Number of pooled relation-identification decisions so far.
    pub fn pairs_seen(&self) -> u64 {
        self.pairs_seen
    }

    pub fn add(&mut self, doc: &Document, graph: &PredictionGraph) -> Result<()> {
        let mismatch = |what: &str| Error::Validation {
            doc: doc.id.clone(),
            reason: alloc::format!("prediction graph {what}"),
        };
        if graph.id != doc.id {
            return Err(Error::Validation {
                doc: doc.id.clone(),
                reason: alloc::format!("aligned with prediction for {:?}", graph.id),
            });
        }
        if !doc.is_labeled() {
            return Err(mismatch("cannot be scored against an unlabeled document"));
        }
        let m = doc.num_components();
        if graph.ac_predictions.len() != m {
            return Err(mismatch("has the wrong number of components"));
        }
        let n_ac = self.schema.num_ac_types();
        let n_ar = self.schema.num_ar_types();
        for (&g, &p) in doc.ac_labels.iter().zip(&graph.ac_predictions) {
            if p >= n_ac {
                return Err(mismatch("predicts an unknown component type"));
            }
            tally(&mut self.actc, g, p);
        }
        for (i, j) in enumerate_pairs(m) {
            let (Some(&exists), Some(&ty)) = (graph.ari.get(&(i, j)), graph.pair_types.get(&(i, j))) else {
                return Err(mismatch("is missing a component pair"));
            };
            if ty == 0 || ty >= n_ar {
                return Err(mismatch("has an invalid relation type"));
            }
            let gold = doc.ar_label(i, j);
            // Relation is class 0 and non-relation class 1 in `ari`.
            tally(&mut self.ari, usize::from(gold == 0), usize::from(!exists));
            self.pairs_seen += 1;
            match self.scope {
                ArtcScope::GoldRelations if gold != 0 => tally(&mut self.artc, gold, ty),
                ArtcScope::EndToEnd => {
                    let pred = if exists { ty } else { 0 };
                    if gold != 0 || pred != 0 {
                        tally(&mut self.artc, gold, pred);
                    }
                }
                ArtcScope::GoldRelations => {}
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> MetricsReport {
        let scores = |counts: &[ClassCounts], names: &[String]| {
            let per_class: Vec<(String, f64)> = counts.iter().zip(names).map(|(c, n)| (n.clone(), c.f1())).collect();
            let macro_f1 = per_class.iter().map(|(_, f)| f).sum::<f64>() / per_class.len() as f64;
            TaskScores { macro_f1, per_class }
        };
        let actc = scores(&self.actc, self.schema.ac_types());
        let ari_names: Vec<String> = ARI_CLASSES.iter().map(|s| String::from(*s)).collect();
        let ari = scores(&self.ari, &ari_names);
        let artc = scores(&self.artc[1..], &self.schema.ar_types()[1..]);
        let avg = (actc.macro_f1 + ari.macro_f1 + artc.macro_f1) / 3.0;
        MetricsReport { actc, ari, artc, avg }
    }
}

/// Scores one prediction graph per document, aligned by position and id.
pub fn evaluate_documents<'a>(
    schema: &LabelSchema,
    docs: impl IntoIterator<Item = &'a Document>,
    graphs: &[PredictionGraph],
    scope: ArtcScope,
) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new(schema, scope);
    let mut n = 0;
    for doc in docs {
        let graph = graphs.get(n).ok_or_else(|| Error::Validation {
            doc: doc.id.clone(),
            reason: "no prediction graph".into(),
        })?;
        acc.add(doc, graph)?;
        n += 1;
    }
    if n != graphs.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} prediction graphs for {n} documents",
            graphs.len()
        )));
    }
    Ok(acc.finish())
}

/// [`evaluate_documents`] over a whole corpus with the default relation-typing scope.
pub fn evaluate(corpus: &Corpus, graphs: &[PredictionGraph]) -> Result<MetricsReport> {
    evaluate_documents(corpus.schema(), corpus.documents(), graphs, ArtcScope::GoldRelations)
}

/// Per-class lookup by name.
pub fn class_f1(scores: &TaskScores) -> BTreeMap<&str, f64> {
    scores.per_class.iter().map(|(n, f)| (n.as_str(), *f)).collect()
}
