//! Central finite-difference gradient checks.
//!
//! Only forward evaluations are used on the numeric side, so the check is
//! independent of every backward implementation it verifies.

use super::{no_grad, Element, Tensor};
use crate::error::Result;

/// A scalar-valued function of tensor inputs, as checked by this module.
pub type ScalarFn<'a, T> = dyn Fn(&[Tensor<T>]) -> Result<Tensor<T>> + 'a;

/// Analytic gradients of `f` with respect to `inputs` via `backward`.
pub fn analytic_gradients<T: Element>(f: &ScalarFn<'_, T>, inputs: &[Tensor<T>]) -> Result<Vec<Vec<T>>> {
    inputs.iter().for_each(|t| t.zero_grad());
    f(inputs)?.backward()?;
    Ok(inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![T::zero(); t.numel()]))
        .collect())
}

/// Central difference of `f` with respect to one element of one input.
pub fn numeric_partial<T: Element>(
    f: &ScalarFn<'_, T>,
    inputs: &[Tensor<T>],
    which: usize,
    index: usize,
    eps: f64,
) -> Result<f64> {
    let original = inputs[which].data()[index];
    let h = T::from_f64_lossy(eps);
    let eval = |v: T| -> Result<f64> {
        inputs[which].data_mut()[index] = v;
        Ok(no_grad(|| f(inputs))?.item().as_f64())
    };
    let plus = eval(original + h);
    let minus = eval(original - h);
    inputs[which].data_mut()[index] = original;
    Ok((plus? - minus?) / (2.0 * eps))
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` for each input.
pub fn check_gradients<T: Element>(f: &ScalarFn<'_, T>, inputs: &[Tensor<T>], eps: f64) -> Result<Vec<f64>> {
    let analytic = analytic_gradients(f, inputs)?;
    let mut errors = Vec::with_capacity(inputs.len());
    for (which, a) in analytic.iter().enumerate() {
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for (index, &av) in a.iter().enumerate() {
            let n = numeric_partial(f, inputs, which, index, eps)?;
            let av = av.as_f64();
            diff += (av - n) * (av - n);
            na += av * av;
            nn += n * n;
        }
        let denom = na.sqrt().max(nn.sqrt());
        errors.push(if denom == 0.0 { 0.0 } else { diff.sqrt() / denom });
    }
    Ok(errors)
}

/// One sampled scalar parameter and how its two gradients compare.
#[derive(Debug, Clone, Copy)]
pub struct SampledGrad {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl SampledGrad {
    pub fn rel_err(&self) -> f64 {
        let denom = self.analytic.abs().max(self.numeric.abs());
        if denom == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / denom
        }
    }
}

/// Compares gradients at selected `(input, index)` positions only.
pub fn check_sampled<T: Element>(
    f: &ScalarFn<'_, T>,
    inputs: &[Tensor<T>],
    positions: &[(usize, usize)],
    eps: f64,
) -> Result<Vec<SampledGrad>> {
    let analytic = analytic_gradients(f, inputs)?;
    positions
        .iter()
        .map(|&(input, index)| {
            Ok(SampledGrad {
                input,
                index,
                analytic: analytic[input][index].as_f64(),
                numeric: numeric_partial(f, inputs, input, index, eps)?,
            })
        })
        .collect()
}
