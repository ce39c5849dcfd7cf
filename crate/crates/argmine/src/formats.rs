//! JSON and JSONL file formats: corpora, label schemas, prediction graphs
//! and the per-epoch training log.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use argmine_core::corpus::NONE_LABEL;
use argmine_core::relation::PredictionGraph;
use argmine_core::trainer::EpochLog;
use argmine_core::{ComponentSpan, Corpus, Document, LabelSchema, Split};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentRecord {
    id: String,
    tokens: Vec<String>,
    spans: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ac_labels: Option<Vec<String>>,
    #[serde(default)]
    ar_labels: Vec<(usize, usize, String)>,
}

impl DocumentRecord {
    fn into_document(self, schema: &LabelSchema) -> argmine_core::Result<Document> {
        let ac_labels = match self.ac_labels {
            Some(names) => names
                .iter()
                .map(|n| schema.ac_index(n))
                .collect::<argmine_core::Result<_>>()?,
            None if !self.ar_labels.is_empty() => {
                return Err(argmine_core::Error::Validation {
                    doc: self.id,
                    reason: "relations given without component labels".into(),
                })
            }
            None => Vec::new(),
        };
        let mut ar_labels = std::collections::BTreeMap::new();
        for (i, j, name) in &self.ar_labels {
            let t = schema.ar_index(name)?;
            if t == 0 {
                continue;
            }
            if ar_labels.insert((*i, *j), t).is_some() {
                return Err(argmine_core::Error::Validation {
                    doc: self.id,
                    reason: format!("pair ({i}, {j}) listed twice"),
                });
            }
        }
        Ok(Document {
            id: self.id,
            tokens: self.tokens,
            spans: self.spans.iter().map(|&[s, e]| ComponentSpan::new(s, e)).collect(),
            ac_labels,
            ar_labels,
        })
    }

    fn from_document(doc: &Document, schema: &LabelSchema) -> Self {
        DocumentRecord {
            id: doc.id.clone(),
            tokens: doc.tokens.clone(),
            spans: doc.spans.iter().map(|s| [s.start, s.end]).collect(),
            ac_labels: doc
                .is_labeled()
                .then(|| doc.ac_labels.iter().map(|&k| schema.ac_types()[k].clone()).collect()),
            ar_labels: doc
                .ar_labels
                .iter()
                .map(|(&(i, j), &t)| (i, j, schema.ar_types()[t].clone()))
                .collect(),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(CliError::MissingPath(path.to_path_buf()));
    }
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

/// Parses every non-blank line of `path` as one `T`.
fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (k, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| CliError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Loads a JSONL corpus. With `require_labels` every document must carry
/// component labels; otherwise labels are optional (prediction input).
pub fn load_corpus(path: &Path, schema: &LabelSchema, split: Split, require_labels: bool) -> Result<Corpus> {
    let records: Vec<DocumentRecord> = read_jsonl(path)?;
    let docs = records
        .into_iter()
        .map(|r| r.into_document(schema))
        .collect::<argmine_core::Result<Vec<_>>>()?;
    let corpus = if require_labels {
        Corpus::new(schema.clone(), docs, split)?
    } else {
        Corpus::new_unlabeled(schema.clone(), docs, split)?
    };
    Ok(corpus)
}

pub fn save_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let schema = corpus.schema();
    write_jsonl(
        path,
        corpus
            .documents()
            .iter()
            .map(|d| DocumentRecord::from_document(d, schema)),
    )
}

pub fn load_schema(path: &Path) -> Result<LabelSchema> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingPath(path.to_path_buf()),
        _ => CliError::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn save_schema(path: &Path, schema: &LabelSchema) -> Result<()> {
    let text = serde_json::to_string_pretty(schema).expect("schemas serialize");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// One line of prediction output: component types and typed relations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    pub id: String,
    pub ac: Vec<String>,
    pub relations: Vec<(usize, usize, String)>,
}

impl GraphRecord {
    pub fn from_graph(graph: &PredictionGraph, schema: &LabelSchema) -> Self {
        GraphRecord {
            id: graph.id.clone(),
            ac: graph
                .ac_predictions
                .iter()
                .map(|&k| schema.ac_types()[k].clone())
                .collect(),
            relations: graph
                .relations()
                .map(|(i, j, t)| (i, j, schema.ar_types()[t].clone()))
                .collect(),
        }
    }

    /// Checks names against `schema` and indices against the component count.
    pub fn validate(&self, schema: &LabelSchema) -> argmine_core::Result<()> {
        for name in &self.ac {
            schema.ac_index(name)?;
        }
        let m = self.ac.len();
        for (i, j, name) in &self.relations {
            if *i >= m || *j >= m || i == j || name == NONE_LABEL {
                return Err(argmine_core::Error::Validation {
                    doc: self.id.clone(),
                    reason: format!("invalid predicted relation ({i}, {j}, {name:?})"),
                });
            }
            schema.ar_index(name)?;
        }
        Ok(())
    }
}

pub fn save_predictions(path: &Path, records: &[GraphRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn load_predictions(path: &Path, schema: &LabelSchema) -> Result<Vec<GraphRecord>> {
    let records: Vec<GraphRecord> = read_jsonl(path)?;
    for r in &records {
        r.validate(schema)?;
    }
    Ok(records)
}

#[derive(Serialize)]
struct LogLine<'a> {
    epoch: usize,
    train_loss: f64,
    dev_macro_f1_ari: f64,
    dev_macro_f1_actc: f64,
    dev_macro_f1_artc: f64,
    lr_groups: std::collections::BTreeMap<&'a str, f64>,
}

pub fn save_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    write_jsonl(
        path,
        log.iter().map(|e| LogLine {
            epoch: e.epoch,
            train_loss: e.train_loss,
            dev_macro_f1_ari: e.dev_macro_f1_ari,
            dev_macro_f1_actc: e.dev_macro_f1_actc,
            dev_macro_f1_artc: e.dev_macro_f1_artc,
            lr_groups: e.lr_groups.iter().map(|(k, v)| (k.as_str(), *v)).collect(),
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use argmine_core::corpus::{generate_synthetic, SyntheticConfig};

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn one_document_echoes_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "c.jsonl",
            r#"{"id":"d","tokens":["a","b","c"],"spans":[[0,0],[1,2]],"ac_labels":["Claim","Premise"],"ar_labels":[[1,0,"support"]]}"#,
        );
        let c = load_corpus(&p, &LabelSchema::pe(), Split::Train, true).unwrap();
        assert_eq!(c.len(), 1);
        let d = &c.documents()[0];
        assert_eq!(d.num_components(), 2);
        assert_eq!(d.ar_labels.len(), 1);
        assert_eq!(d.ar_label(1, 0), 1);
    }

    #[test]
    fn span_past_end_names_the_document() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "c.jsonl",
            r#"{"id":"bad-doc","tokens":["a"],"spans":[[0,3]],"ac_labels":["Claim"]}"#,
        );
        let err = load_corpus(&p, &LabelSchema::pe(), Split::Train, true).unwrap_err();
        assert!(err.to_string().contains("bad-doc"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn self_relation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "c.jsonl",
            r#"{"id":"x","tokens":["a","b"],"spans":[[0,0],[1,1]],"ac_labels":["Claim","Claim"],"ar_labels":[[1,1,"attack"]]}"#,
        );
        let err = load_corpus(&p, &LabelSchema::pe(), Split::Train, true).unwrap_err();
        assert!(err.to_string().contains("self-relation"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "c.jsonl",
            "{\"id\":\"a\",\"tokens\":[\"x\"],\"spans\":[[0,0]],\"ac_labels\":[\"Claim\"]}\n\n{oops\n",
        );
        match load_corpus(&p, &LabelSchema::pe(), Split::Train, true).unwrap_err() {
            CliError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_labels_and_unlabeled_input() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "c.jsonl",
            r#"{"id":"a","tokens":["x"],"spans":[[0,0]],"ac_labels":["Fact"]}"#,
        );
        assert!(matches!(
            load_corpus(&p, &LabelSchema::pe(), Split::Train, true),
            Err(CliError::Core(argmine_core::Error::UnknownLabel { .. }))
        ));
        let p = write(dir.path(), "u.jsonl", r#"{"id":"a","tokens":["x"],"spans":[[0,0]]}"#);
        assert!(load_corpus(&p, &LabelSchema::pe(), Split::Test, true).is_err());
        assert!(!load_corpus(&p, &LabelSchema::pe(), Split::Test, false)
            .unwrap()
            .is_labeled());
    }

    #[test]
    fn corpus_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_synthetic(&SyntheticConfig::new(12, 0.4, LabelSchema::cdcp()), 2).unwrap();
        let p = dir.path().join("c.jsonl");
        save_corpus(&p, &c).unwrap();
        assert_eq!(load_corpus(&p, &LabelSchema::cdcp(), Split::Train, true).unwrap(), c);
    }

    #[test]
    fn schema_round_trips_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        save_schema(&p, &LabelSchema::cdcp()).unwrap();
        assert_eq!(load_schema(&p).unwrap(), LabelSchema::cdcp());
        let bad = write(
            dir.path(),
            "b.json",
            r#"{"ac_types":["a"],"ar_types":["none","r"],"extra":1}"#,
        );
        assert!(load_schema(&bad).is_err());
        let no_none = write(dir.path(), "n.json", r#"{"ac_types":["a"],"ar_types":["r"]}"#);
        assert!(load_schema(&no_none).is_err());
    }
}
