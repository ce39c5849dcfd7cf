//! Central finite-difference gradient checking.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Perturbation δ in `(f(θ+δ) − f(θ−δ)) / 2δ`.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Tensors larger than this are checked on a random coordinate sample.
    pub max_coords_per_tensor: usize,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            tol: 1e-4,
            max_coords_per_tensor: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    /// Flat index, analytic and numeric value of the worst coordinate.
    pub worst: (usize, f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error < self.tol)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(move |t| t.max_rel_error >= self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`. The floor keeps coordinates whose true
/// gradient is zero from dividing rounding noise by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic[i]` against central differences of `f` around `params`.
///
/// `params` is perturbed in place and restored before returning.
pub fn grad_check<F>(
    params: &mut [Tensor<f64>],
    names: &[String],
    analytic: &[Tensor<f64>],
    opts: &GradCheckOptions,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    if opts.step <= 0.0 {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    if params.len() != analytic.len() || params.len() != names.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} params, {} gradients, {} names",
            params.len(),
            analytic.len(),
            names.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut tensors = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        if params[i].shape() != analytic[i].shape() {
            return Err(Error::ShapeMismatch {
                op: "grad_check",
                left: params[i].shape(),
                right: analytic[i].shape(),
            });
        }
        let len = params[i].len();
        let coords: Vec<usize> = if len <= opts.max_coords_per_tensor {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, opts.max_coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };

        let mut check = TensorCheck {
            name: names[i].clone(),
            coords_checked: coords.len(),
            max_rel_error: 0.0,
            worst: (0, 0.0, 0.0),
        };
        for k in coords {
            let original = params[i].data()[k];
            params[i].data_mut()[k] = original + opts.step;
            let plus = f(params);
            params[i].data_mut()[k] = original - opts.step;
            let minus = f(params);
            params[i].data_mut()[k] = original;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite { op: "grad_check" });
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[i].data()[k];
            let err = relative_error(a, numeric);
            if err > check.max_rel_error || err.is_nan() {
                check.max_rel_error = err;
                check.worst = (k, a, numeric);
            }
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tol: opts.tol, tensors })
}
