//! Relation extraction over ordered component pairs.
//!
//! Components attend to each other (single head, `d_k = d_b`), the result
//! is added back and layer-normalized, and each ordered pair `(i, j)` is
//! represented as `[AC_i, AC_j, clip(i − j)·W_dist]`. One classifier
//! scores `none` plus every relation type; existence and type decisions
//! are both read off that single distribution.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::ac_classifier::{argmax, mlp_probs};
use crate::encoder::{EncoderInput, Mode};
use crate::model::{forward, Mlp, ModelParams};
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::{Document, Error, Result};

/// Self-attention projections (`[d_b x d_b]` each) and layer-norm affine (`[1 x d_b]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Attention<S> {
    pub query: Tensor<S>,
    pub key: Tensor<S>,
    pub value: Tensor<S>,
    pub gain: Tensor<S>,
    pub bias: Tensor<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub gain: Var,
    pub bias: Var,
}

/// Distance embedding `W_dist: [1 x d_dist]` and the clipping bound on `|i − j|`.
#[derive(Clone, Debug, PartialEq)]
pub struct Distance<S> {
    pub weight: Tensor<S>,
    pub max_dist: usize,
}

/// Output of [`argu_atten`].
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput<S> {
    /// `softmax(QKᵀ/√d_k)·V`, `[m x d_k]`.
    pub output: Tensor<S>,
    /// Row-stochastic `[m x m]` weights.
    pub weights: Tensor<S>,
}

fn attention_core<S: Real>(tape: &mut Tape<S>, att: &AttentionVars, acs: Var) -> Result<(Var, Var)> {
    let q = tape.matmul(acs, att.query)?;
    let k = tape.matmul(acs, att.key)?;
    let v = tape.matmul(acs, att.value)?;
    let d_k = tape.shape(att.key).1;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, S::one() / S::of(d_k as f64).sqrt())?;
    let weights = tape.softmax_rows(scores)?;
    Ok((tape.matmul(weights, v)?, weights))
}

fn residual_norm<S: Real>(tape: &mut Tape<S>, acs: Var, atten_out: Var, gain: Var, bias: Var) -> Result<Var> {
    let sum = tape.add(acs, atten_out)?;
    let norm = tape.layernorm_rows(sum)?;
    let scaled = tape.mul_row(norm, gain)?;
    tape.add_row(scaled, bias)
}

/// Records attention plus residual layer norm; returns `(ResNetOut, weights)`.
pub fn attend<S: Real>(tape: &mut Tape<S>, att: &AttentionVars, acs: Var) -> Result<(Var, Var)> {
    let (out, weights) = attention_core(tape, att, acs)?;
    let normed = residual_norm(tape, acs, out, att.gain, att.bias)?;
    Ok((normed, weights))
}

/// Clipped signed component distance `i − j`.
pub fn clipped_distance(i: usize, j: usize, max_dist: usize) -> Result<i64> {
    if i == j {
        return Err(Error::InvalidArgument(alloc::format!(
            "no distance for self-pair ({i}, {i})"
        )));
    }
    let bound = max_dist as i64;
    Ok((i as i64 - j as i64).clamp(-bound, bound))
}

/// Records `[reps[i], reps[j], clip(i − j)·W_dist]` for every pair.
pub fn pair_features<S: Real>(
    tape: &mut Tape<S>,
    reps: Var,
    pairs: &[(usize, usize)],
    distance: Option<(Var, usize)>,
) -> Result<Var> {
    let src = tape.gather_rows(reps, pairs.iter().map(|p| p.0).collect())?;
    let tgt = tape.gather_rows(reps, pairs.iter().map(|p| p.1).collect())?;
    match distance {
        Some((weight, max_dist)) => {
            let d: Vec<S> = pairs
                .iter()
                .map(|&(i, j)| clipped_distance(i, j, max_dist).map(|d| S::of(d as f64)))
                .collect::<Result<_>>()?;
            let column = tape.constant(Tensor::new(d.len(), 1, d)?);
            let dist = tape.matmul(column, weight)?;
            tape.concat_cols(&[src, tgt, dist])
        }
        None => tape.concat_cols(&[src, tgt]),
    }
}

/// Self-attention over the component matrix `acs` (`[m x d_b]`).
pub fn argu_atten<S: Real>(acs: &Tensor<S>, params: &Attention<S>) -> Result<AttentionOutput<S>> {
    if acs.rows() == 0 {
        return Err(Error::InvalidArgument("attention over zero components".into()));
    }
    let mut tape = Tape::new();
    let x = tape.constant(acs.clone());
    let vars = params.constants(&mut tape);
    let (out, weights) = attention_core(&mut tape, &vars, x)?;
    Ok(AttentionOutput {
        output: tape.value(out).clone(),
        weights: tape.value(weights).clone(),
    })
}

/// `LN(acs + atten_out)·gain + bias`, row-wise, with variance epsilon 1e-5.
pub fn residual_layernorm<S: Real>(
    acs: &Tensor<S>,
    atten_out: &Tensor<S>,
    gain: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let a = tape.constant(acs.clone());
    let o = tape.constant(atten_out.clone());
    let g = tape.constant(gain.clone());
    let b = tape.constant(bias.clone());
    let out = residual_norm(&mut tape, a, o, g, b)?;
    Ok(tape.value(out).clone())
}

/// `clip(i − j, ±max_dist)·W_dist`.
pub fn distance_vector<S: Real>(i: usize, j: usize, params: &Distance<S>) -> Result<Vec<S>> {
    let d = S::of(clipped_distance(i, j, params.max_dist)? as f64);
    Ok(params.weight.data().iter().map(|&w| d * w).collect())
}

/// Distribution over `none` and every relation type for one pair representation.
pub fn classify_pair<S: Real>(pair: &[S], params: &Mlp<S>) -> Result<Vec<S>> {
    mlp_probs(pair, params)
}

/// Relation existence: false exactly when the argmax class is `none` (index 0).
pub fn postprocess_ari<S: Real>(pair_probs: &[S]) -> Result<bool> {
    Ok(argmax(pair_probs)? != 0)
}

/// Relation type given existence: argmax with the `none` entry set to zero.
pub fn postprocess_artc<S: Real>(pair_probs: &[S]) -> Result<usize> {
    if pair_probs.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least one relation type besides none".into(),
        ));
    }
    // Scanning only the non-none entries keeps an all-zero tail from tying back to `none`.
    Ok(1 + argmax(&pair_probs[1..])?)
}

impl<S: Real> Attention<S> {
    pub(crate) fn constants(&self, tape: &mut Tape<S>) -> AttentionVars {
        AttentionVars {
            query: tape.constant(self.query.clone()),
            key: tape.constant(self.key.clone()),
            value: tape.constant(self.value.clone()),
            gain: tape.constant(self.gain.clone()),
            bias: tape.constant(self.bias.clone()),
        }
    }
}

/// Predicted argument graph of one document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionGraph {
    pub id: String,
    /// Predicted type index per component.
    pub ac_predictions: Vec<usize>,
    /// Existence decision for every ordered pair.
    pub ari: BTreeMap<(usize, usize), bool>,
    /// Type-given-existence decision for every ordered pair (never `none`).
    /// Only pairs with `ari == true` form the predicted graph; the others
    /// are kept so relation typing can be scored on gold relations.
    pub pair_types: BTreeMap<(usize, usize), usize>,
}

impl PredictionGraph {
    /// Predicted relations `(i, j, type)`.
    pub fn relations(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.ari
            .iter()
            .filter(|(_, &on)| on)
            .map(|(&(i, j), _)| (i, j, self.pair_types[&(i, j)]))
    }
}

/// Runs the model in eval mode on one document and decodes its graph.
pub fn extract_graph<S: Real>(
    doc: &Document,
    input: &EncoderInput<S>,
    params: &ModelParams<S>,
) -> Result<PredictionGraph> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let out = forward(&mut tape, &vars, &params.config, input, &doc.spans, &mut Mode::Eval)?;
    let ac_probs = tape.softmax_rows(out.ac_logits)?;
    let ac_probs = tape.value(ac_probs);
    let ac_predictions = (0..ac_probs.rows())
        .map(|r| argmax(ac_probs.row(r)))
        .collect::<Result<Vec<_>>>()?;

    let mut ari = BTreeMap::new();
    let mut pair_types = BTreeMap::new();
    if let Some(logits) = out.pair_logits {
        let probs = tape.softmax_rows(logits)?;
        let probs = tape.value(probs);
        for (r, &pair) in out.pairs.iter().enumerate() {
            ari.insert(pair, postprocess_ari(probs.row(r))?);
            pair_types.insert(pair, postprocess_artc(probs.row(r))?);
        }
    }
    Ok(PredictionGraph {
        id: doc.id.clone(),
        ac_predictions,
        ari,
        pair_types,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn attention(d: usize) -> Attention<f64> {
        Attention {
            query: Tensor::from_fn(d, d, |r, c| ((r * 7 + c * 3) % 5) as f64 * 0.1 - 0.2),
            key: Tensor::from_fn(d, d, |r, c| ((r * 2 + c * 5) % 7) as f64 * 0.1 - 0.3),
            value: Tensor::from_fn(d, d, |r, c| ((r + c * 4) % 3) as f64 * 0.2 - 0.2),
            gain: Tensor::filled(1, d, 1.0),
            bias: Tensor::zeros(1, d),
        }
    }

    #[test]
    fn single_component_attends_to_itself() {
        let att = attention(4);
        let acs = Tensor::from_rows(&[[0.5, -1.0, 2.0, 0.1]]).unwrap();
        let out = argu_atten(&acs, &att).unwrap();
        assert_eq!(out.weights.data(), &[1.0]);
        let v = acs.matmul(&att.value).unwrap();
        assert!(out.output.max_abs_diff(&v).unwrap() < 1e-15);
    }

    #[test]
    fn zero_query_gives_uniform_weights() {
        let mut att = attention(4);
        att.query = Tensor::zeros(4, 4);
        let acs = Tensor::from_fn(3, 4, |r, c| (r as f64 - c as f64) * 0.7);
        let out = argu_atten(&acs, &att).unwrap();
        for w in out.weights.data() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let acs = Tensor::filled(1, 5, 2.5);
        let out = residual_layernorm(
            &acs,
            &Tensor::zeros(1, 5),
            &Tensor::filled(1, 5, 1.0),
            &Tensor::zeros(1, 5),
        )
        .unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gain_yields_bias() {
        let acs = Tensor::from_rows(&[[1.0, 2.0, 4.0], [0.0, -3.0, 1.0]]).unwrap();
        let bias = Tensor::row_vector(vec![0.3, -0.1, 7.0]);
        let out = residual_layernorm(&acs, &acs, &Tensor::zeros(1, 3), &bias).unwrap();
        for r in 0..2 {
            assert_eq!(out.row(r), bias.row(0));
        }
    }

    #[test]
    fn residual_layernorm_rejects_shape_mismatch() {
        let a = Tensor::<f64>::zeros(2, 3);
        let b = Tensor::<f64>::zeros(3, 3);
        let g = Tensor::filled(1, 3, 1.0);
        assert!(residual_layernorm(&a, &b, &g, &Tensor::zeros(1, 3)).is_err());
    }

    #[test]
    fn distance_examples() {
        let unit = Distance {
            weight: Tensor::<f64>::row_vector(vec![1.0, 1.0, 1.0]),
            max_dist: 32,
        };
        assert!(distance_vector(3, 3, &unit).is_err());
        assert_eq!(distance_vector(5, 3, &unit).unwrap(), vec![2.0, 2.0, 2.0]);
        let clipped = Distance {
            weight: Tensor::<f64>::row_vector(vec![1.0, 0.0]),
            max_dist: 3,
        };
        assert_eq!(distance_vector(0, 5, &clipped).unwrap(), vec![-3.0, 0.0]);
    }

    #[test]
    fn ari_examples() {
        assert!(!postprocess_ari(&[0.6f64, 0.3, 0.1]).unwrap());
        assert!(postprocess_ari(&[0.2f64, 0.3, 0.5]).unwrap());
        assert!(!postprocess_ari(&[1.0f64 / 3.0; 3]).unwrap());
    }

    #[test]
    fn artc_examples() {
        assert_eq!(postprocess_artc(&[0.9f64, 0.04, 0.06]).unwrap(), 2);
        assert_eq!(postprocess_artc(&[0.0f64, 1.0, 0.0]).unwrap(), 1);
        assert!(postprocess_artc(&[1.0f64]).is_err());
    }

    #[test]
    fn zero_pair_classifier_is_uniform() {
        let mlp = Mlp::<f64> {
            hidden: crate::model::Linear::zeros(5, 4),
            out: crate::model::Linear::zeros(4, 3),
        };
        let p = classify_pair(&[0.1, 0.2, 0.3, 0.4, 0.5], &mlp).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}
