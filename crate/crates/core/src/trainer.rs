//! Joint multi-task training with per-group learning rates and early
//! stopping on dev Macro-F1 of relation identification.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Truncation;
use crate::encoder::{EncoderSource, Mode, PreparedDoc};
use crate::evaluator::{evaluate_documents, ArtcScope, MetricsReport};
use crate::model::{forward, ModelConfig, ModelParams, ModelVars, ParamGroup};
use crate::numerics::{grad_check, AdamW, AdamWConfig, GradCheckOptions, GradCheckReport, Real, Tape, Tensor, Var};
use crate::relation::{extract_graph, PredictionGraph};
use crate::{Corpus, Error, LabelSchema, Result};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct TrainConfig {
    pub lr_encoder: f64,
    pub lr_ac_head: f64,
    pub lr_ar_head: f64,
    /// Decoupled AdamW decay.
    pub weight_decay: f64,
    /// Coefficient of the in-loss `(l2 / 2)·‖θ‖²` penalty.
    pub l2: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_seq_len: usize,
    pub min_epochs: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub no_arguatten: bool,
    pub no_distance: bool,
    /// Every group trains at `lr_encoder`.
    pub uniform_lr: bool,
    pub d_b: usize,
    pub d_dist: usize,
    pub max_dist: usize,
    pub ac_hidden: usize,
    pub ar_hidden: usize,
    /// Residual ReLU layer on top of the toy embeddings.
    pub mixing: bool,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Fraction of the training corpus carved off as dev when no dev corpus is given.
    pub dev_fraction: f64,
    /// Per-class weights of the relation loss, `none` first.
    pub ar_class_weights: Option<Vec<f64>>,
}

impl TrainConfig {
    /// Full-size settings for precomputed 768-wide token vectors.
    pub fn full() -> Self {
        TrainConfig {
            lr_encoder: 2e-5,
            lr_ac_head: 2e-4,
            lr_ar_head: 2e-3,
            weight_decay: 0.01,
            l2: 0.0,
            dropout: 0.2,
            batch_size: 16,
            max_seq_len: 512,
            min_epochs: 15,
            patience: 5,
            max_epochs: 100,
            seed: 0,
            no_arguatten: false,
            no_distance: false,
            uniform_lr: false,
            d_b: 768,
            d_dist: 16,
            max_dist: 32,
            ac_hidden: 512,
            ar_hidden: 512,
            mixing: false,
            grad_clip: Some(5.0),
            dev_fraction: 0.1,
            ar_class_weights: None,
        }
    }

    /// Small dimensions with a trainable toy encoder and the same learning
    /// rates as [`TrainConfig::full`]. Patience is longer because the
    /// component head keeps improving after relation identification saturates.
    pub fn toy() -> Self {
        TrainConfig {
            batch_size: 2,
            patience: 50,
            max_epochs: 300,
            d_b: 32,
            ac_hidden: 64,
            ar_hidden: 64,
            mixing: true,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr_encoder", self.lr_encoder),
            ("lr_ac_head", self.lr_ac_head),
            ("lr_ar_head", self.lr_ar_head),
            ("weight_decay", self.weight_decay),
            ("l2", self.l2),
        ];
        for (name, v) in rates {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(alloc::format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_seq_len == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size, max_seq_len and max_epochs must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::Config(alloc::format!(
                "dev_fraction {} outside [0, 1)",
                self.dev_fraction
            )));
        }
        if let Some(c) = self.grad_clip {
            if !c.is_finite() || c <= 0.0 {
                return Err(Error::Config(alloc::format!("grad_clip {c} must be positive")));
            }
        }
        if let Some(w) = &self.ar_class_weights {
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Config(
                    "relation class weights must be finite and non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn rate(&self, group: ParamGroup) -> f64 {
        if self.uniform_lr {
            return self.lr_encoder;
        }
        match group {
            ParamGroup::Encoder => self.lr_encoder,
            ParamGroup::AcHead => self.lr_ac_head,
            ParamGroup::ArHead => self.lr_ar_head,
        }
    }

    /// Logged learning rates: one `shared` entry under `uniform_lr`, otherwise one per group.
    pub fn lr_groups(&self) -> Vec<(String, f64)> {
        if self.uniform_lr {
            alloc::vec![(String::from("shared"), self.lr_encoder)]
        } else {
            ParamGroup::ALL
                .iter()
                .map(|&g| (String::from(g.name()), self.rate(g)))
                .collect()
        }
    }

    /// Architecture for `schema`; `vocab_size` is `Some` for the toy encoder.
    pub fn model_config(&self, schema: &LabelSchema, vocab_size: Option<usize>) -> ModelConfig {
        ModelConfig {
            d_b: self.d_b,
            d_dist: self.d_dist,
            max_dist: self.max_dist,
            ac_hidden: self.ac_hidden,
            ar_hidden: self.ar_hidden,
            num_ac_types: schema.num_ac_types(),
            num_ar_types: schema.num_ar_types(),
            vocab_size,
            mixing: self.mixing && vocab_size.is_some(),
            dropout: self.dropout,
            arguatten: !self.no_arguatten,
            distance: !self.no_distance,
        }
    }
}

/// Stops once at least `min_epochs` have run and the monitored metric has
/// not improved for `patience` consecutive epochs.
///
/// Metrics are `(primary, tie_break)` pairs compared lexicographically: an
/// epoch improves when its primary value is strictly greater, or equal with
/// a strictly greater tie-break value.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    min_epochs: usize,
    patience: usize,
    best: Option<(f64, f64)>,
    best_epoch: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(min_epochs: usize, patience: usize) -> Self {
        EarlyStopping {
            min_epochs,
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn best(&self) -> Option<(f64, f64)> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    /// Records the metric of 1-based `epoch`.
    pub fn observe(&mut self, epoch: usize, metric: (f64, f64)) -> StopDecision {
        let improved = self
            .best
            .map_or(true, |b| metric.0 > b.0 || (metric.0 == b.0 && metric.1 > b.1));
        if improved {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: epoch >= self.min_epochs && self.stale >= self.patience,
        }
    }
}

/// Records the batch objective: mean over documents of the summed component
/// and pair NLLs, plus `(l2 / 2)·‖θ‖²` over `vars.leaves()`.
pub fn joint_loss<S: Real>(
    tape: &mut Tape<S>,
    vars: &ModelVars,
    config: &ModelConfig,
    batch: &[&PreparedDoc<S>],
    ar_class_weights: &[S],
    l2: f64,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut total: Option<Var> = None;
    let mut add = |tape: &mut Tape<S>, v: Var| -> Result<()> {
        total = Some(match total {
            Some(t) => tape.add(t, v)?,
            None => v,
        });
        Ok(())
    };
    for prepared in batch {
        let doc = &prepared.doc;
        if !doc.is_labeled() {
            return Err(Error::Validation {
                doc: doc.id.clone(),
                reason: "training requires component labels".into(),
            });
        }
        let out = forward(tape, vars, config, &prepared.input, &doc.spans, mode)?;
        let ac = tape.softmax_cross_entropy(out.ac_logits, &doc.ac_labels, &[])?;
        add(tape, ac)?;
        if let Some(logits) = out.pair_logits {
            let gold: Vec<usize> = out.pairs.iter().map(|&(i, j)| doc.ar_label(i, j)).collect();
            let ar = tape.softmax_cross_entropy(logits, &gold, ar_class_weights)?;
            add(tape, ar)?;
        }
    }
    let sum = total.expect("non-empty batch");
    let mut loss = tape.scale(sum, S::of(1.0 / batch.len() as f64))?;
    if l2 > 0.0 {
        for &leaf in vars.leaves() {
            let sq = tape.sum_squares(leaf)?;
            let term = tape.scale(sq, S::of(l2 / 2.0))?;
            loss = tape.add(loss, term)?;
        }
    }
    Ok(loss)
}

/// Value of [`joint_loss`] in eval mode.
pub fn joint_loss_value<S: Real>(
    params: &ModelParams<S>,
    batch: &[&PreparedDoc<S>],
    ar_class_weights: &[S],
    l2: f64,
) -> Result<S> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let loss = joint_loss(
        &mut tape,
        &vars,
        &params.config,
        batch,
        ar_class_weights,
        l2,
        &mut Mode::Eval,
    )?;
    Ok(tape.value(loss).get(0, 0))
}

/// Central-difference check of the [`joint_loss`] gradient for every
/// parameter tensor, in eval mode. `tamper` may rewrite the analytic
/// gradients before comparison.
pub fn joint_loss_grad_check(
    params: &ModelParams<f64>,
    batch: &[&PreparedDoc<f64>],
    l2: f64,
    opts: &GradCheckOptions,
    tamper: impl FnOnce(&mut [Tensor<f64>]),
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let loss = joint_loss(&mut tape, &vars, &params.config, batch, &[], l2, &mut Mode::Eval)?;
    let grads = tape.backward(loss)?;
    let mut analytic: Vec<Tensor<f64>> = vars.leaves().iter().map(|&v| grads.wrt(v)).collect();
    tamper(&mut analytic);

    let names: Vec<String> = params.named().into_iter().map(|(n, _, _)| n).collect();
    let mut tensors = params.to_tensors();
    let mut probe = params.clone();
    grad_check(&mut tensors, &names, &analytic, opts, |t| {
        probe.set_tensors(t)?;
        joint_loss_value(&probe, batch, &[], l2)
    })
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before scaling.
pub fn clip_global_norm<S: Real>(grads: &mut [Tensor<S>], max_norm: f64) -> f64 {
    let norm = Float::sqrt(grads.iter().map(|g| g.squared_norm().as_f64()).sum::<f64>());
    if norm > max_norm {
        let factor = S::of(max_norm / norm);
        for g in grads.iter_mut() {
            *g = g.scale(factor);
        }
    }
    norm
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    pub epoch: usize,
    /// Document-weighted mean batch loss over the epoch.
    pub train_loss: f64,
    pub dev_macro_f1_ari: f64,
    pub dev_macro_f1_actc: f64,
    pub dev_macro_f1_artc: f64,
    pub lr_groups: Vec<(String, f64)>,
}

/// Best parameters seen during training and what is needed to resume from them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S> {
    pub params: ModelParams<S>,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub best_dev_macro_f1_ari: f64,
    /// Seed and stream position of the training RNG at the end of `epoch`.
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub checkpoint: Checkpoint<S>,
    pub log: Vec<EpochLog>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Material dropped by the sequence-length cut, train and dev combined.
    pub truncation: Truncation,
}

/// Truncates and encodes both corpora, then runs [`train_prepared`].
pub fn train<S: Real>(
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
    source: &EncoderSource<'_, S>,
    config: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    if train_corpus.schema() != dev_corpus.schema() {
        return Err(Error::Schema(
            "train and dev corpora use different label schemas".into(),
        ));
    }
    config.validate()?;
    let (train_cut, mut truncation) = train_corpus.truncated(config.max_seq_len);
    let (dev_cut, dev_trunc) = dev_corpus.truncated(config.max_seq_len);
    truncation.merge(dev_trunc);
    let train_docs = PreparedDoc::prepare_all(&train_cut, source, config.d_b)?;
    let dev_docs = PreparedDoc::prepare_all(&dev_cut, source, config.d_b)?;
    let vocab_size = match source {
        EncoderSource::Toy(vocab) => Some(vocab.size()),
        EncoderSource::Precomputed(_) => None,
    };
    let model_config = config.model_config(train_corpus.schema(), vocab_size);
    let mut outcome = train_prepared(&train_docs, &dev_docs, train_corpus.schema(), model_config, config)?;
    outcome.truncation = truncation;
    Ok(outcome)
}

/// Predicted graphs for `docs` under `params`, in order.
pub fn predict_all<S: Real>(params: &ModelParams<S>, docs: &[PreparedDoc<S>]) -> Result<Vec<PredictionGraph>> {
    docs.iter().map(|p| extract_graph(&p.doc, &p.input, params)).collect()
}

/// Scores `params` on prepared, labeled documents.
pub fn evaluate_prepared<S: Real>(
    params: &ModelParams<S>,
    schema: &LabelSchema,
    docs: &[PreparedDoc<S>],
    scope: ArtcScope,
) -> Result<MetricsReport> {
    let graphs = predict_all(params, docs)?;
    evaluate_documents(schema, docs.iter().map(|p| &p.doc), &graphs, scope)
}

/// The training loop proper. One seeded RNG drives initialization,
/// per-epoch shuffling and dropout, in that order.
pub fn train_prepared<S: Real>(
    train_docs: &[PreparedDoc<S>],
    dev_docs: &[PreparedDoc<S>],
    schema: &LabelSchema,
    model_config: ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    config.validate()?;
    if train_docs.is_empty() || dev_docs.is_empty() {
        return Err(Error::InvalidArgument("train and dev sets must be non-empty".into()));
    }
    let class_weights: Vec<S> = match &config.ar_class_weights {
        Some(w) if w.len() != schema.num_ar_types() => {
            return Err(Error::DimensionMismatch {
                what: "relation class weights",
                expected: schema.num_ar_types(),
                found: w.len(),
            })
        }
        Some(w) => w.iter().map(|&x| S::of(x)).collect(),
        None => Vec::new(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::<S>::init(model_config, &mut rng)?;
    let rates: Vec<f64> = params.groups().into_iter().map(|g| config.rate(g)).collect();
    let adam = AdamWConfig {
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    };
    let mut optimizer = AdamW::new(adam, &params.shapes());
    let mut tensors = params.to_tensors();

    let mut stopping = EarlyStopping::new(config.min_epochs, config.patience);
    let mut best: Option<Checkpoint<S>> = None;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let mut stopped_early = false;
    let mut epochs_run = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedDoc<S>> = chunk.iter().map(|&k| &train_docs[k]).collect();
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let loss = joint_loss(
                &mut tape,
                &vars,
                &params.config,
                &batch,
                &class_weights,
                config.l2,
                &mut Mode::Train(&mut rng),
            )?;
            let value = tape.value(loss).get(0, 0).as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite { op: "joint_loss" });
            }
            loss_sum += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            let mut grads: Vec<Tensor<S>> = vars.leaves().iter().map(|&v| grads.wrt(v)).collect();
            if let Some(max_norm) = config.grad_clip {
                clip_global_norm(&mut grads, max_norm);
            }
            optimizer.step(&mut tensors, &grads, &rates)?;
            params.set_tensors(&tensors)?;
        }
        epochs_run = epoch;

        let report = evaluate_prepared(&params, schema, dev_docs, ArtcScope::GoldRelations)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_docs.len() as f64,
            dev_macro_f1_ari: report.ari.macro_f1,
            dev_macro_f1_actc: report.actc.macro_f1,
            dev_macro_f1_artc: report.artc.macro_f1,
            lr_groups: config.lr_groups(),
        });
        let decision = stopping.observe(epoch, (report.ari.macro_f1, report.avg));
        if decision.improved {
            best = Some(Checkpoint {
                params: params.clone(),
                train_config: config.clone(),
                epoch,
                best_dev_macro_f1_ari: report.ari.macro_f1,
                rng_seed: rng.get_seed(),
                rng_word_pos: rng.get_word_pos(),
            });
        }
        if decision.stop {
            stopped_early = epoch < config.max_epochs;
            break;
        }
    }

    Ok(TrainOutcome {
        checkpoint: best.expect("at least one epoch ran"),
        log,
        epochs_run,
        stopped_early,
        truncation: Truncation::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticConfig};
    use crate::encoder::Vocab;

    #[test]
    fn early_stopping_waits_for_min_epochs() {
        let mut s = EarlyStopping::new(3, 1);
        assert!(!s.observe(1, (0.5, 0.0)).stop);
        assert!(!s.observe(2, (0.4, 0.9)).stop);
        assert!(!s.observe(3, (0.6, 0.0)).stop);
        let d = s.observe(4, (0.6, 0.0));
        assert!(!d.improved && d.stop);
        assert_eq!(s.best_epoch(), 3);
    }

    #[test]
    fn ties_on_the_primary_metric_fall_back_to_the_tie_break() {
        let mut s = EarlyStopping::new(0, 2);
        s.observe(1, (1.0, 0.5));
        assert!(s.observe(2, (1.0, 0.6)).improved);
        assert!(!s.observe(3, (0.9, 1.0)).improved);
        assert!(!s.observe(4, (1.0, 0.6)).improved);
        assert_eq!(s.best_epoch(), 2);
    }

    #[test]
    fn uniform_lr_collapses_groups() {
        let mut c = TrainConfig::toy();
        c.uniform_lr = true;
        assert_eq!(c.lr_groups(), alloc::vec![(String::from("shared"), c.lr_encoder)]);
        assert!(ParamGroup::ALL.iter().all(|&g| c.rate(g) == c.lr_encoder));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = TrainConfig::toy();
        c.patience = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::toy();
        c.lr_ar_head = -1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::toy();
        c.grad_clip = Some(0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut g = alloc::vec![Tensor::from_rows(&[[3.0f64, 4.0]]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].squared_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rates_leave_parameters_untouched() {
        let corpus = generate_synthetic(&SyntheticConfig::new(4, 0.3, LabelSchema::pe()), 1).unwrap();
        let vocab = Vocab::from_corpus(&corpus);
        let mut cfg = TrainConfig::toy();
        cfg.d_b = 8;
        cfg.ac_hidden = 8;
        cfg.ar_hidden = 8;
        cfg.lr_encoder = 0.0;
        cfg.lr_ac_head = 0.0;
        cfg.lr_ar_head = 0.0;
        cfg.max_epochs = 2;
        let out = train::<f32>(&corpus, &corpus, &EncoderSource::Toy(&vocab), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = ModelParams::<f32>::init(out.checkpoint.params.config.clone(), &mut rng).unwrap();
        assert_eq!(out.checkpoint.params, init);
        assert_eq!(out.log.len(), 2);
    }
}
