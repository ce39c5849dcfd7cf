//! Model parameters, their optimizer groups, and the per-document forward
//! pass shared by training, evaluation and gradient checking.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, RngCore};

use crate::ac_classifier::mlp_logits;
use crate::corpus::enumerate_pairs;
use crate::encoder::{encode, EncoderInput, Mode, ToyEncoder, ToyEncoderVars};
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::relation::{attend, pair_features, Attention, AttentionVars, Distance};
use crate::{ComponentSpan, Error, Result};

/// Learning-rate group of a parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ParamGroup {
    Encoder,
    AcHead,
    ArHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Encoder, ParamGroup::AcHead, ParamGroup::ArHead];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::AcHead => "ac_head",
            ParamGroup::ArHead => "ar_head",
        }
    }
}

/// Architecture and sizes. `d_k` equals `d_b` so the attention output can
/// be added back onto its input.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub d_b: usize,
    pub d_dist: usize,
    pub max_dist: usize,
    pub ac_hidden: usize,
    pub ar_hidden: usize,
    pub num_ac_types: usize,
    /// Relation classes including `none`.
    pub num_ar_types: usize,
    /// Rows of the toy embedding table; `None` means precomputed token vectors.
    pub vocab_size: Option<usize>,
    pub mixing: bool,
    pub dropout: f64,
    pub arguatten: bool,
    pub distance: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_b", self.d_b),
            ("d_dist", self.d_dist),
            ("max_dist", self.max_dist),
            ("ac_hidden", self.ac_hidden),
            ("ar_hidden", self.ar_hidden),
            ("num_ac_types", self.num_ac_types),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(alloc::format!("{name} must be positive")));
            }
        }
        if self.num_ar_types < 2 {
            return Err(Error::Config("need at least one relation type besides none".into()));
        }
        if self.vocab_size == Some(0) {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(alloc::format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Width of one pair representation.
    pub fn pair_width(&self) -> usize {
        2 * self.d_b + if self.distance { self.d_dist } else { 0 }
    }
}

/// Affine layer `x·W + b` with `W: [in x out]`, `b: [1 x out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl<S: Real> Linear<S> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Tensor::zeros(input, output),
            bias: Tensor::zeros(1, output),
        }
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier(input: usize, output: usize, rng: &mut dyn RngCore) -> Self {
        Linear {
            weight: xavier(input, output, rng),
            bias: Tensor::zeros(1, output),
        }
    }

    pub(crate) fn constants(&self, tape: &mut Tape<S>) -> LinearVars {
        LinearVars {
            weight: tape.constant(self.weight.clone()),
            bias: tape.constant(self.bias.clone()),
        }
    }
}

/// One hidden ReLU layer followed by an output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<S> {
    pub hidden: Linear<S>,
    pub out: Linear<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub hidden: LinearVars,
    pub out: LinearVars,
}

impl<S: Real> Mlp<S> {
    pub fn xavier(input: usize, hidden: usize, output: usize, rng: &mut dyn RngCore) -> Self {
        Mlp {
            hidden: Linear::xavier(input, hidden, rng),
            out: Linear::xavier(hidden, output, rng),
        }
    }

    pub(crate) fn constants(&self, tape: &mut Tape<S>) -> MlpVars {
        MlpVars {
            hidden: self.hidden.constants(tape),
            out: self.out.constants(tape),
        }
    }
}

pub(crate) fn xavier<S: Real>(fan_in: usize, fan_out: usize, rng: &mut dyn RngCore) -> Tensor<S> {
    let limit = Float::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(fan_in, fan_out, |_, _| S::of(rng.gen_range(-limit..limit)))
}

/// Every trainable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    pub encoder: Option<ToyEncoder<S>>,
    pub ac_head: Mlp<S>,
    pub attention: Option<Attention<S>>,
    pub distance: Option<Distance<S>>,
    pub ar_head: Mlp<S>,
}

/// Tape handles mirroring [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub encoder: Option<ToyEncoderVars>,
    pub ac_head: MlpVars,
    pub attention: Option<AttentionVars>,
    pub distance: Option<Var>,
    pub ar_head: MlpVars,
    leaves: Vec<Var>,
}

impl ModelVars {
    /// Leaf handles in [`ModelParams::named`] order.
    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }
}

impl<S: Real> ModelParams<S> {
    /// Seeded initialization: Xavier-uniform matrices, zero biases, unit
    /// layer-norm gain, embeddings uniform with unit variance.
    pub fn init(config: ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let d = config.d_b;
        let encoder = config.vocab_size.map(|vocab| {
            let a = Float::sqrt(3f64);
            let embedding = Tensor::from_fn(vocab, d, |_, _| S::of(rng.gen_range(-a..a)));
            let mixing = config.mixing.then(|| Linear::xavier(d, d, &mut *rng));
            ToyEncoder { embedding, mixing }
        });
        let ac_head = Mlp::xavier(d, config.ac_hidden, config.num_ac_types, rng);
        let attention = config.arguatten.then(|| Attention {
            query: xavier(d, d, rng),
            key: xavier(d, d, rng),
            value: xavier(d, d, rng),
            gain: Tensor::filled(1, d, S::one()),
            bias: Tensor::zeros(1, d),
        });
        let distance = config.distance.then(|| Distance {
            weight: xavier(1, config.d_dist, rng),
            max_dist: config.max_dist,
        });
        let ar_head = Mlp::xavier(config.pair_width(), config.ar_hidden, config.num_ar_types, rng);
        Ok(ModelParams {
            config,
            encoder,
            ac_head,
            attention,
            distance,
            ar_head,
        })
    }

    /// `(name, group, tensor)` for every trainable tensor, in a fixed order.
    pub fn named(&self) -> Vec<(String, ParamGroup, &Tensor<S>)> {
        let mut out: Vec<(String, ParamGroup, &Tensor<S>)> = Vec::new();
        let mut push = |name: &str, group, t| out.push((String::from(name), group, t));
        use ParamGroup::*;
        if let Some(enc) = &self.encoder {
            push("encoder.embedding", Encoder, &enc.embedding);
            if let Some(mix) = &enc.mixing {
                push("encoder.mix.weight", Encoder, &mix.weight);
                push("encoder.mix.bias", Encoder, &mix.bias);
            }
        }
        push("ac_head.hidden.weight", AcHead, &self.ac_head.hidden.weight);
        push("ac_head.hidden.bias", AcHead, &self.ac_head.hidden.bias);
        push("ac_head.out.weight", AcHead, &self.ac_head.out.weight);
        push("ac_head.out.bias", AcHead, &self.ac_head.out.bias);
        if let Some(att) = &self.attention {
            push("attention.query", ArHead, &att.query);
            push("attention.key", ArHead, &att.key);
            push("attention.value", ArHead, &att.value);
            push("attention.norm.gain", ArHead, &att.gain);
            push("attention.norm.bias", ArHead, &att.bias);
        }
        if let Some(dist) = &self.distance {
            push("distance.weight", ArHead, &dist.weight);
        }
        push("ar_head.hidden.weight", ArHead, &self.ar_head.hidden.weight);
        push("ar_head.hidden.bias", ArHead, &self.ar_head.hidden.bias);
        push("ar_head.out.weight", ArHead, &self.ar_head.out.weight);
        push("ar_head.out.bias", ArHead, &self.ar_head.out.bias);
        out
    }

    /// Mutable tensors in [`ModelParams::named`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out: Vec<&mut Tensor<S>> = Vec::new();
        if let Some(enc) = &mut self.encoder {
            out.push(&mut enc.embedding);
            if let Some(mix) = &mut enc.mixing {
                out.push(&mut mix.weight);
                out.push(&mut mix.bias);
            }
        }
        let ac = &mut self.ac_head;
        out.extend([
            &mut ac.hidden.weight,
            &mut ac.hidden.bias,
            &mut ac.out.weight,
            &mut ac.out.bias,
        ]);
        if let Some(att) = &mut self.attention {
            out.extend([
                &mut att.query,
                &mut att.key,
                &mut att.value,
                &mut att.gain,
                &mut att.bias,
            ]);
        }
        if let Some(dist) = &mut self.distance {
            out.push(&mut dist.weight);
        }
        let ar = &mut self.ar_head;
        out.extend([
            &mut ar.hidden.weight,
            &mut ar.hidden.bias,
            &mut ar.out.weight,
            &mut ar.out.bias,
        ]);
        out
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        self.named().into_iter().map(|(_, g, _)| g).collect()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.named().into_iter().map(|(_, _, t)| t.shape()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Copies of all tensors in [`ModelParams::named`] order.
    pub fn to_tensors(&self) -> Vec<Tensor<S>> {
        self.named().into_iter().map(|(_, _, t)| t.clone()).collect()
    }

    /// Overwrites all tensors from a list in [`ModelParams::named`] order.
    pub fn set_tensors(&mut self, tensors: &[Tensor<S>]) -> Result<()> {
        let mut slots = self.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "model has {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, t) in slots.iter_mut().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "set_tensors",
                    left: slot.shape(),
                    right: t.shape(),
                });
            }
            **slot = t.clone();
        }
        Ok(())
    }

    pub fn cast<T: Real>(&self) -> ModelParams<T> {
        ModelParams {
            config: self.config.clone(),
            encoder: self.encoder.as_ref().map(|e| ToyEncoder {
                embedding: e.embedding.cast(),
                mixing: e.mixing.as_ref().map(|l| Linear {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                }),
            }),
            ac_head: cast_mlp(&self.ac_head),
            attention: self.attention.as_ref().map(|a| Attention {
                query: a.query.cast(),
                key: a.key.cast(),
                value: a.value.cast(),
                gain: a.gain.cast(),
                bias: a.bias.cast(),
            }),
            distance: self.distance.as_ref().map(|d| Distance {
                weight: d.weight.cast(),
                max_dist: d.max_dist,
            }),
            ar_head: cast_mlp(&self.ar_head),
        }
    }

    /// Registers every tensor as a leaf, in [`ModelParams::named`] order.
    pub fn register(&self, tape: &mut Tape<S>) -> ModelVars {
        let mut leaves = Vec::new();
        let mut leaf = |t: &Tensor<S>, tape: &mut Tape<S>| {
            let v = tape.leaf(t.clone());
            leaves.push(v);
            v
        };
        let linear =
            |l: &Linear<S>, tape: &mut Tape<S>, leaf: &mut dyn FnMut(&Tensor<S>, &mut Tape<S>) -> Var| LinearVars {
                weight: leaf(&l.weight, tape),
                bias: leaf(&l.bias, tape),
            };
        let encoder = self.encoder.as_ref().map(|e| ToyEncoderVars {
            embedding: leaf(&e.embedding, tape),
            mixing: e.mixing.as_ref().map(|m| linear(m, tape, &mut leaf)),
        });
        let ac_head = MlpVars {
            hidden: linear(&self.ac_head.hidden, tape, &mut leaf),
            out: linear(&self.ac_head.out, tape, &mut leaf),
        };
        let attention = self.attention.as_ref().map(|a| AttentionVars {
            query: leaf(&a.query, tape),
            key: leaf(&a.key, tape),
            value: leaf(&a.value, tape),
            gain: leaf(&a.gain, tape),
            bias: leaf(&a.bias, tape),
        });
        let distance = self.distance.as_ref().map(|d| leaf(&d.weight, tape));
        let ar_head = MlpVars {
            hidden: linear(&self.ar_head.hidden, tape, &mut leaf),
            out: linear(&self.ar_head.out, tape, &mut leaf),
        };
        ModelVars {
            encoder,
            ac_head,
            attention,
            distance,
            ar_head,
            leaves,
        }
    }
}

fn cast_mlp<S: Real, T: Real>(m: &Mlp<S>) -> Mlp<T> {
    Mlp {
        hidden: Linear {
            weight: m.hidden.weight.cast(),
            bias: m.hidden.bias.cast(),
        },
        out: Linear {
            weight: m.out.weight.cast(),
            bias: m.out.bias.cast(),
        },
    }
}

/// Tape nodes produced for one document.
#[derive(Clone, Debug)]
pub struct DocForward {
    /// `[m x num_ac_types]` component type logits.
    pub ac_logits: Var,
    /// `[m(m-1) x num_ar_types]` relation logits, absent when `m == 1`.
    pub pair_logits: Option<Var>,
    /// Ordered pairs, one per `pair_logits` row.
    pub pairs: Vec<(usize, usize)>,
    /// Row-stochastic `[m x m]` attention weights, absent when ablated.
    pub attention: Option<Var>,
}

/// Records the whole model for one document:
/// tokens → pooled components → type logits, and
/// components → attention + residual layer norm → pair features → relation logits.
pub fn forward<S: Real>(
    tape: &mut Tape<S>,
    vars: &ModelVars,
    config: &ModelConfig,
    input: &EncoderInput<S>,
    spans: &[ComponentSpan],
    mode: &mut Mode<'_>,
) -> Result<DocForward> {
    if spans.is_empty() {
        return Err(Error::InvalidArgument("document has no components".into()));
    }
    let h = encode(tape, vars.encoder.as_ref(), input, config.d_b, config.dropout, mode)?;
    let acs = tape.pool_spans(h, spans)?;
    let ac_logits = mlp_logits(tape, &vars.ac_head, acs)?;

    let (reps, attention) = match &vars.attention {
        Some(att) => {
            let (out, weights) = attend(tape, att, acs)?;
            (out, Some(weights))
        }
        None => (acs, None),
    };

    let pairs = enumerate_pairs(spans.len());
    let pair_logits = if pairs.is_empty() {
        None
    } else {
        let distance = vars.distance.map(|w| (w, config.max_dist));
        let features = pair_features(tape, reps, &pairs, distance)?;
        Some(mlp_logits(tape, &vars.ar_head, features)?)
    };
    Ok(DocForward {
        ac_logits,
        pair_logits,
        pairs,
        attention,
    })
}
