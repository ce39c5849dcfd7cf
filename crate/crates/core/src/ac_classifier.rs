//! Component type classification: a one-hidden-layer ReLU MLP followed by
//! softmax, and argmax decoding.

use alloc::vec::Vec;

use crate::model::{Mlp, MlpVars};
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// Softmax with max subtraction.
pub fn softmax<S: Real>(logits: &[S]) -> Result<Vec<S>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "softmax" });
    }
    let mut out = logits.to_vec();
    crate::numerics::tape_softmax(&mut out);
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<S: Real>(values: &[S]) -> Result<usize> {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("argmax of an empty vector".into()));
    }
    Ok(best)
}

/// Predicted component type from its class distribution.
pub fn predict_ac_label<S: Real>(probs: &[S]) -> Result<usize> {
    argmax(probs)
}

/// Records `relu(x·W1 + b1)·W2 + b2` on the tape; one logit row per input row.
pub fn mlp_logits<S: Real>(tape: &mut Tape<S>, mlp: &MlpVars, x: Var) -> Result<Var> {
    let h = tape.matmul(x, mlp.hidden.weight)?;
    let h = tape.add_row(h, mlp.hidden.bias)?;
    let h = tape.relu(h)?;
    let o = tape.matmul(h, mlp.out.weight)?;
    tape.add_row(o, mlp.out.bias)
}

/// Class distribution of an MLP over one input vector.
pub fn mlp_probs<S: Real>(x: &[S], mlp: &Mlp<S>) -> Result<Vec<S>> {
    let in_dim = mlp.hidden.weight.rows();
    if x.len() != in_dim {
        return Err(Error::DimensionMismatch {
            what: "classifier input",
            expected: in_dim,
            found: x.len(),
        });
    }
    let mut tape = Tape::new();
    let vars = mlp.constants(&mut tape);
    let input = tape.constant(Tensor::row_vector(x.to_vec()));
    let logits = mlp_logits(&mut tape, &vars, input)?;
    let probs = tape.softmax_rows(logits)?;
    Ok(tape.value(probs).data().to_vec())
}

/// Distribution over component types for one pooled component row.
pub fn classify_ac<S: Real>(ac: &[S], params: &Mlp<S>) -> Result<Vec<S>> {
    mlp_probs(ac, params)
}
