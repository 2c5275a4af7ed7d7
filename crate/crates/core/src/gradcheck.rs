//! Central finite-difference check of reverse-mode gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// Maximum of `per_input_errors`; infinite when a NaN was seen.
    pub max_relative_error: f64,
    pub per_input_errors: Vec<f64>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub nan_detected: bool,
}

impl GradReport {
    pub fn passed(&self, tol: f64) -> bool {
        !self.nan_detected && self.max_relative_error < tol
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many evenly spaced elements per input.
    pub max_elements: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_elements: None,
        }
    }
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the backward pass of `f` against central differences with the
/// given step, on every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    grad_check_with(
        f,
        inputs,
        GradCheckOptions {
            step,
            max_elements: None,
        },
    )
}

pub fn grad_check_with<F>(f: F, inputs: &[Tensor], opts: GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::detach_param).collect();
    let loss = f(&leaves)?;
    if loss.numel() != 1 {
        return Err(Error::NonScalarLoss(loss.shape().to_vec()));
    }
    let grads = loss.backward()?;

    let mut report = GradReport {
        max_relative_error: 0.0,
        per_input_errors: Vec::with_capacity(inputs.len()),
        analytic: Vec::with_capacity(inputs.len()),
        numeric: Vec::with_capacity(inputs.len()),
        nan_detected: false,
    };

    let eval = |k: usize, values: Vec<f64>| -> Result<f64> {
        let mut probe: Vec<Tensor> = inputs.iter().map(Tensor::stop_gradient).collect();
        probe[k] = Tensor::from_vec(values, inputs[k].shape())?;
        Ok(f(&probe)?.item())
    };

    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(&leaves[k]);
        let n = input.numel();
        let stride = match opts.max_elements {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut numeric = vec![f64::NAN; n];
        let mut worst: f64 = 0.0;
        for j in (0..n).step_by(stride) {
            let mut plus = input.to_vec();
            plus[j] += opts.step;
            let mut minus = input.to_vec();
            minus[j] -= opts.step;
            let d = (eval(k, plus)? - eval(k, minus)?) / (2.0 * opts.step);
            numeric[j] = d;
            if d.is_nan() || analytic[j].is_nan() {
                report.nan_detected = true;
                worst = f64::INFINITY;
            } else {
                worst = worst.max(relative_error(analytic[j], d));
            }
        }
        report.max_relative_error = report.max_relative_error.max(worst);
        report.per_input_errors.push(worst);
        report.analytic.push(analytic);
        report.numeric.push(numeric);
    }
    Ok(report)
}
