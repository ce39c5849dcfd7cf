//! Straight-line reference implementations on nested `Vec`s. Nothing here
//! touches the tape or the tensor kernels.

#![allow(dead_code)]

use argmine_core::model::{Mlp, ModelParams};
use argmine_core::numerics::Tensor;
use argmine_core::{ComponentSpan, Document};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[i][l] * b[l][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn pool(h: &Mat, spans: &[ComponentSpan]) -> Mat {
    spans
        .iter()
        .map(|s| {
            let mut row = vec![0.0; h[0].len()];
            for token in &h[s.start..=s.end] {
                for (v, x) in row.iter_mut().zip(token) {
                    *v += x;
                }
            }
            let n = (s.end - s.start + 1) as f64;
            row.iter().map(|v| v / n).collect()
        })
        .collect()
}

pub fn mlp_logits(x: &[f64], mlp: &Mlp<f64>) -> Vec<f64> {
    let w1 = to_mat(&mlp.hidden.weight);
    let b1 = mlp.hidden.bias.data();
    let w2 = to_mat(&mlp.out.weight);
    let b2 = mlp.out.bias.data();
    let hidden: Vec<f64> = (0..b1.len())
        .map(|j| {
            let mut acc = b1[j];
            for (i, xi) in x.iter().enumerate() {
                acc += xi * w1[i][j];
            }
            acc.max(0.0)
        })
        .collect();
    (0..b2.len())
        .map(|j| {
            let mut acc = b2[j];
            for (i, hi) in hidden.iter().enumerate() {
                acc += hi * w2[i][j];
            }
            acc
        })
        .collect()
}

/// `(attention output, weights)`.
pub fn attention(acs: &Mat, q: &Mat, k: &Mat, v: &Mat) -> (Mat, Mat) {
    let (qs, ks, vs) = (matmul(acs, q), matmul(acs, k), matmul(acs, v));
    let d_k = k[0].len() as f64;
    let m = acs.len();
    let mut weights = vec![vec![0.0; m]; m];
    for i in 0..m {
        let scores: Vec<f64> = (0..m)
            .map(|j| qs[i].iter().zip(&ks[j]).map(|(a, b)| a * b).sum::<f64>() / d_k.sqrt())
            .collect();
        weights[i] = softmax(&scores);
    }
    (matmul(&weights, &vs), weights)
}

pub fn layernorm(x: &Mat, gain: &[f64], bias: &[f64]) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) / (var + 1e-5).sqrt() * gain[c] + bias[c])
                .collect()
        })
        .collect()
}

pub fn pairs(m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..m {
        for j in 0..m {
            if i != j {
                out.push((i, j));
            }
        }
    }
    out
}

pub struct OracleForward {
    pub ac_logits: Mat,
    pub pair_logits: Mat,
}

/// Whole-model forward pass for precomputed token vectors `h`.
pub fn forward(params: &ModelParams<f64>, h: &Mat, spans: &[ComponentSpan]) -> OracleForward {
    assert!(params.encoder.is_none(), "oracle covers precomputed inputs only");
    let acs = pool(h, spans);
    let ac_logits = acs.iter().map(|r| mlp_logits(r, &params.ac_head)).collect();
    let reps = match &params.attention {
        Some(att) => {
            let (out, _) = attention(&acs, &to_mat(&att.query), &to_mat(&att.key), &to_mat(&att.value));
            let sum: Mat = acs
                .iter()
                .zip(&out)
                .map(|(a, o)| a.iter().zip(o).map(|(x, y)| x + y).collect())
                .collect();
            layernorm(&sum, att.gain.data(), att.bias.data())
        }
        None => acs,
    };
    let pair_logits = pairs(spans.len())
        .into_iter()
        .map(|(i, j)| {
            let mut feat = reps[i].clone();
            feat.extend(&reps[j]);
            if let Some(dist) = &params.distance {
                let bound = dist.max_dist as f64;
                let d = (i as f64 - j as f64).clamp(-bound, bound);
                feat.extend(dist.weight.data().iter().map(|w| d * w));
            }
            mlp_logits(&feat, &params.ar_head)
        })
        .collect();
    OracleForward { ac_logits, pair_logits }
}

/// Sum of per-item NLLs for one document, with probabilities floored at 1e-12.
pub fn document_nll(params: &ModelParams<f64>, h: &Mat, doc: &Document) -> f64 {
    let out = forward(params, h, &doc.spans);
    let nll = |logits: &[f64], gold: usize| -softmax(logits)[gold].max(1e-12).ln();
    let mut total = 0.0;
    for (logits, &gold) in out.ac_logits.iter().zip(&doc.ac_labels) {
        total += nll(logits, gold);
    }
    for (logits, (i, j)) in out.pair_logits.iter().zip(pairs(doc.spans.len())) {
        total += nll(logits, doc.ar_label(i, j));
    }
    total
}

/// TP/FP/FN by scanning every item, then F1 with the zero-denominator convention.
pub fn confusion_f1(gold: &[usize], pred: &[usize], class: usize) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for k in 0..gold.len() {
        if gold[k] == class && pred[k] == class {
            tp += 1;
        } else if pred[k] == class {
            fp += 1;
        } else if gold[k] == class {
            fn_ += 1;
        }
    }
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}
