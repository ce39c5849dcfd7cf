//! The work behind each subcommand, callable without going through the binary.

use std::path::{Path, PathBuf};

use argmine_core::corpus::{generate_synthetic, RelationTypeRule, SyntheticConfig, Truncation};
use argmine_core::encoder::{EmbeddingTable, EncoderSource, PreparedDoc, Vocab};
use argmine_core::evaluator::{evaluate_documents, ArtcScope};
use argmine_core::numerics::{GradCheckOptions, GradCheckReport, Tensor};
use argmine_core::trainer::{evaluate_prepared, joint_loss_grad_check, predict_all, train, TrainConfig, TrainOutcome};
use argmine_core::{Corpus, LabelSchema, MetricsReport, ModelParams, Split};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

use crate::checkpoint::{load_model, save_model, SavedModel};
use crate::embeddings::load_embeddings;
use crate::error::{CliError, Result};
use crate::formats::{
    load_corpus, load_schema, save_corpus, save_predictions, save_schema, save_training_log, GraphRecord,
};
use crate::report::save_report;
use crate::run_config::RunConfig;

pub const MODEL_FILE: &str = "model.amck";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

fn warn_truncation(what: &str, t: &Truncation) {
    if !t.is_empty() {
        log::warn!(
            "{what}: sequence-length cut dropped {} tokens, {} components and {} relations",
            t.tokens,
            t.components,
            t.relations
        );
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        _ => Ok(()),
    }
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(Vocab::from_tokens(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
    ))
}

/// Token source for a toy or precomputed encoder.
enum Tokens {
    Toy(Vocab),
    Precomputed(EmbeddingTable<f32>),
}

impl Tokens {
    fn source(&self) -> EncoderSource<'_, f32> {
        match self {
            Tokens::Toy(v) => EncoderSource::Toy(v),
            Tokens::Precomputed(t) => EncoderSource::Precomputed(t),
        }
    }

    fn vocab(&self) -> Option<Vocab> {
        match self {
            Tokens::Toy(v) => Some(v.clone()),
            Tokens::Precomputed(_) => None,
        }
    }
}

#[derive(Debug)]
pub struct TrainSummary {
    pub output_dir: PathBuf,
    pub outcome: TrainOutcome<f32>,
    pub dev_report: MetricsReport,
    pub test_report: Option<MetricsReport>,
}

/// Trains from a run config. `overrides` replace training settings after
/// the config file's own.
///
/// Writes the checkpoint, the per-epoch log and dev (and test) reports of
/// the best checkpoint into the output directory.
pub fn cmd_train(config_path: &Path, overrides: &Map<String, Value>) -> Result<TrainSummary> {
    let run = RunConfig::load(config_path, overrides)?;
    let config = &run.train;
    let schema = load_schema(&run.paths.schema)?;
    let full = load_corpus(&run.paths.train, &schema, Split::Train, true)?;
    let (train_corpus, dev_corpus) = match &run.paths.dev {
        Some(p) => (full, load_corpus(p, &schema, Split::Dev, true)?),
        None => {
            let (t, d) = full.split_off_dev(config.dev_fraction, config.seed)?;
            log::info!(
                "carved {} dev documents from {} training documents",
                d.len(),
                full.len()
            );
            (t, d)
        }
    };
    let tokens = match (&run.paths.embeddings, &run.paths.vocab) {
        (Some(p), _) => Tokens::Precomputed(load_embeddings(p)?),
        (None, Some(p)) => Tokens::Toy(read_vocab(p)?),
        (None, None) => Tokens::Toy(Vocab::from_corpus(&train_corpus)),
    };

    std::fs::create_dir_all(&run.paths.output_dir).map_err(|e| CliError::io(&run.paths.output_dir, e))?;
    let outcome = train(&train_corpus, &dev_corpus, &tokens.source(), config)?;
    warn_truncation("train and dev", &outcome.truncation);
    log::info!(
        "ran {} epochs{}; best epoch {} with dev ARI macro-F1 {:.4}",
        outcome.epochs_run,
        if outcome.stopped_early { " (early stop)" } else { "" },
        outcome.checkpoint.epoch,
        outcome.checkpoint.best_dev_macro_f1_ari
    );

    let out = &run.paths.output_dir;
    let saved = SavedModel {
        checkpoint: outcome.checkpoint.clone(),
        schema: schema.clone(),
        vocab: tokens.vocab(),
    };
    save_model(&out.join(MODEL_FILE), &saved)?;
    save_training_log(&out.join(TRAIN_LOG_FILE), &outcome.log)?;

    let score = |corpus: &Corpus| -> Result<MetricsReport> {
        let (cut, _) = corpus.truncated(config.max_seq_len);
        let docs = PreparedDoc::prepare_all(&cut, &tokens.source(), config.d_b)?;
        Ok(evaluate_prepared(
            &saved.checkpoint.params,
            &schema,
            &docs,
            ArtcScope::GoldRelations,
        )?)
    };
    let dev_report = score(&dev_corpus)?;
    save_report(out, "dev_report", &dev_report)?;
    let test_report = match &run.paths.test {
        Some(p) => {
            let report = score(&load_corpus(p, &schema, Split::Test, true)?)?;
            save_report(out, "test_report", &report)?;
            Some(report)
        }
        None => None,
    };
    Ok(TrainSummary {
        output_dir: out.clone(),
        outcome,
        dev_report,
        test_report,
    })
}

/// A checkpoint with its corpus encoded the way the model expects.
struct Loaded {
    model: SavedModel,
    docs: Vec<PreparedDoc<f32>>,
}

fn load_for_inference(
    checkpoint: &Path,
    corpus_path: &Path,
    embeddings: Option<&Path>,
    require_labels: bool,
) -> Result<Loaded> {
    let model = load_model(checkpoint)?;
    let corpus =
        load_corpus(corpus_path, &model.schema, Split::Test, require_labels).map_err(CliError::against_checkpoint)?;
    let tokens = match (&model.vocab, embeddings) {
        (Some(v), None) => Tokens::Toy(v.clone()),
        (None, Some(p)) => Tokens::Precomputed(load_embeddings(p)?),
        (None, None) => {
            return Err(CliError::BadInput(
                "this model reads precomputed token vectors; pass --embeddings".into(),
            ))
        }
        (Some(_), Some(_)) => {
            return Err(CliError::BadInput(
                "this model has its own token encoder; --embeddings does not apply".into(),
            ))
        }
    };
    let train_config = &model.checkpoint.train_config;
    let (cut, truncation) = corpus.truncated(train_config.max_seq_len);
    warn_truncation(&corpus_path.display().to_string(), &truncation);
    let docs = PreparedDoc::prepare_all(&cut, &tokens.source(), model.checkpoint.params.config.d_b)
        .map_err(|e| CliError::from(e).against_checkpoint())?;
    Ok(Loaded { model, docs })
}

/// Scores a checkpoint on a labeled corpus. With `schema`, that schema
/// must equal the checkpoint's.
pub fn cmd_eval(
    checkpoint: &Path,
    corpus: &Path,
    embeddings: Option<&Path>,
    schema: Option<&Path>,
    out_dir: Option<&Path>,
    scope: ArtcScope,
) -> Result<MetricsReport> {
    let loaded = load_for_inference(checkpoint, corpus, embeddings, true)?;
    if let Some(p) = schema {
        if load_schema(p)? != loaded.model.schema {
            return Err(CliError::Incompatible(format!(
                "schema mismatch: {} differs from the checkpoint's label schema",
                p.display()
            )));
        }
    }
    let params = &loaded.model.checkpoint.params;
    let graphs = predict_all(params, &loaded.docs)?;
    let report = evaluate_documents(&loaded.model.schema, loaded.docs.iter().map(|p| &p.doc), &graphs, scope)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        save_report(dir, "report", &report)?;
    }
    Ok(report)
}

/// Writes one predicted graph per input document, in input order.
pub fn cmd_predict(
    checkpoint: &Path,
    corpus: &Path,
    embeddings: Option<&Path>,
    out: &Path,
) -> Result<Vec<GraphRecord>> {
    let loaded = load_for_inference(checkpoint, corpus, embeddings, false)?;
    let graphs = predict_all(&loaded.model.checkpoint.params, &loaded.docs)?;
    let records: Vec<GraphRecord> = graphs
        .iter()
        .map(|g| GraphRecord::from_graph(g, &loaded.model.schema))
        .collect();
    create_parent(out)?;
    save_predictions(out, &records)?;
    Ok(records)
}

#[derive(Clone, Debug)]
pub struct SyntheticArgs {
    pub docs: usize,
    pub density: f64,
    pub seed: u64,
    /// `cdcp`, `pe` or a path to a schema file.
    pub schema: String,
    pub rule: RelationTypeRule,
    pub acs_per_doc: (usize, usize),
    pub out: PathBuf,
    pub schema_out: Option<PathBuf>,
}

pub fn resolve_schema(name_or_path: &str) -> Result<LabelSchema> {
    match name_or_path {
        "cdcp" => Ok(LabelSchema::cdcp()),
        "pe" => Ok(LabelSchema::pe()),
        path => load_schema(Path::new(path)),
    }
}

pub fn cmd_gen_synthetic(args: &SyntheticArgs) -> Result<Corpus> {
    let schema = resolve_schema(&args.schema)?;
    let mut config = SyntheticConfig::new(args.docs, args.density, schema);
    config.type_rule = args.rule;
    config.acs_per_doc = args.acs_per_doc;
    let corpus = generate_synthetic(&config, args.seed)?;
    create_parent(&args.out)?;
    save_corpus(&args.out, &corpus)?;
    if let Some(p) = &args.schema_out {
        create_parent(p)?;
        save_schema(p, corpus.schema())?;
    }
    Ok(corpus)
}

#[derive(Clone, Debug)]
pub struct GradCheckArgs {
    pub seed: u64,
    pub no_arguatten: bool,
    pub no_distance: bool,
    pub components: usize,
    pub l2: f64,
    pub step: f64,
    pub tol: f64,
}

impl Default for GradCheckArgs {
    fn default() -> Self {
        GradCheckArgs {
            seed: 0,
            no_arguatten: false,
            no_distance: false,
            components: 3,
            l2: 0.01,
            step: 1e-4,
            tol: 1e-4,
        }
    }
}

/// Finite-difference check of the full joint loss on a small toy model
/// (width 8, distance width 4, three component and three relation
/// classes). `tamper` may rewrite the analytic gradients first.
pub fn run_gradcheck(args: &GradCheckArgs, tamper: impl FnOnce(&mut [Tensor<f64>])) -> Result<GradCheckReport> {
    if args.components == 0 {
        return Err(CliError::BadInput("--components must be positive".into()));
    }
    let schema = LabelSchema::from_strs(&["a", "b", "c"], &["none", "r1", "r2"]);
    let mut synth = SyntheticConfig::new(1, 0.5, schema.clone());
    synth.acs_per_doc = (args.components, args.components);
    let corpus = generate_synthetic(&synth, args.seed)?;
    let vocab = Vocab::from_corpus(&corpus);

    let mut train_config = TrainConfig::toy();
    train_config.d_b = 8;
    train_config.d_dist = 4;
    train_config.ac_hidden = 8;
    train_config.ar_hidden = 8;
    train_config.dropout = 0.0;
    train_config.no_arguatten = args.no_arguatten;
    train_config.no_distance = args.no_distance;
    let model_config = train_config.model_config(&schema, Some(vocab.size()));
    let params = ModelParams::<f64>::init(model_config, &mut ChaCha8Rng::seed_from_u64(args.seed))?;
    let docs = PreparedDoc::prepare_all(&corpus, &EncoderSource::Toy(&vocab), train_config.d_b)?;
    let batch: Vec<&PreparedDoc<f64>> = docs.iter().collect();
    let opts = GradCheckOptions {
        step: args.step,
        tol: args.tol,
        max_coords_per_tensor: usize::MAX,
        seed: args.seed,
    };
    Ok(joint_loss_grad_check(&params, &batch, args.l2, &opts, tamper)?)
}

impl GradCheckArgs {
    /// Takes the ablation switches and penalty of a run config's training settings.
    pub fn with_run_config(mut self, config: &TrainConfig) -> Self {
        self.no_arguatten |= config.no_arguatten;
        self.no_distance |= config.no_distance;
        if config.l2 > 0.0 {
            self.l2 = config.l2;
        }
        self
    }
}

/// [`run_gradcheck`] that fails when any tensor exceeds the tolerance.
/// With `self_test`, one analytic gradient is deliberately corrupted so a
/// working checker must fail.
pub fn cmd_gradcheck(args: &GradCheckArgs, self_test: bool) -> Result<GradCheckReport> {
    let report = run_gradcheck(args, |grads| {
        if self_test {
            if let Some(last) = grads.last_mut() {
                *last = last.scale(1.5);
            }
        }
    })?;
    for t in &report.tensors {
        println!(
            "{:<32} {:>5} coords  max rel. error {:.3e}",
            t.name, t.coords_checked, t.max_rel_error
        );
    }
    if report.passed() {
        println!("gradient check passed (tolerance {:.0e})", report.tol);
        Ok(report)
    } else {
        Err(CliError::GradCheck(report.failures().cloned().collect()))
    }
}
