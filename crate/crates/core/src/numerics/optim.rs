//! AdamW: Adam moments with weight decay applied directly to the weights.

use alloc::vec::Vec;

use super::{Real, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state: one first/second moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamW<S> {
    config: AdamWConfig,
    first: Vec<Tensor<S>>,
    second: Vec<Tensor<S>>,
    step: u64,
}

impl<S: Real> AdamW<S> {
    /// `shapes` lists the parameter tensors in the order later passed to [`AdamW::step`].
    pub fn new(config: AdamWConfig, shapes: &[(usize, usize)]) -> Self {
        AdamW {
            config,
            first: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            second: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. `rates[i]` is the learning rate of `params[i]`'s group.
    ///
    /// `θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ` with bias-corrected moments.
    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>], rates: &[f64]) -> Result<()> {
        let n = self.first.len();
        if params.len() != n || grads.len() != n || rates.len() != n {
            return Err(Error::InvalidArgument(alloc::format!(
                "optimizer tracks {n} tensors, got {} params, {} grads, {} rates",
                params.len(),
                grads.len(),
                rates.len()
            )));
        }
        for i in 0..n {
            if params[i].shape() != self.first[i].shape() || grads[i].shape() != self.first[i].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adamw",
                    left: params[i].shape(),
                    right: grads[i].shape(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let b1 = S::of(self.config.beta1);
        let b2 = S::of(self.config.beta2);
        let eps = S::of(self.config.eps);
        let wd = S::of(self.config.weight_decay);
        let bc1 = S::one() - b1.powi(t);
        let bc2 = S::one() - b2.powi(t);

        for i in 0..n {
            let lr = S::of(rates[i]);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let g = grads[i].data();
            for (k, theta) in params[i].data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (S::one() - b1) * g[k];
                v[k] = b2 * v[k] + (S::one() - b2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *theta = *theta - lr * (m_hat / (v_hat.sqrt() + eps)) - lr * wd * *theta;
            }
        }
        Ok(())
    }
}
