//! Scalar-loss gradient contract.
//!
//! A [`Loss`] couples a forward evaluation with its hand-coded gradient.
//! [`grad`] evaluates the pair with finiteness checks; [`grad_check`]
//! validates the gradient against central differences and is the contract
//! every loss in the crate must satisfy.

use crate::error::{Error, Result};

/// Forward evaluation of a loss: the scalar value plus the smallest
/// |pre-activation| seen at any rectifier unit during the evaluation
/// (∞ when no rectifier was involved). The latter feeds kink exclusion in
/// [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct LossValue {
    pub value: f64,
    pub min_abs_preact: f64,
}

impl LossValue {
    pub fn smooth(value: f64) -> Self {
        LossValue {
            value,
            min_abs_preact: f64::INFINITY,
        }
    }
}

/// A differentiable scalar function of a flat parameter vector.
pub trait Loss {
    fn param_len(&self) -> usize;

    /// Forward evaluation only.
    fn value(&self, params: &[f64]) -> Result<LossValue>;

    /// Forward plus hand-coded gradient.
    fn value_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Evaluates a loss and its gradient, rejecting non-finite results.
pub fn grad(loss: &dyn Loss, params: &[f64]) -> Result<(f64, Vec<f64>)> {
    if params.len() != loss.param_len() {
        return Err(Error::dim(format!(
            "loss expects {} parameters, got {}",
            loss.param_len(),
            params.len()
        )));
    }
    let (value, gradient) = loss.value_and_grad(params)?;
    if !value.is_finite() {
        return Err(Error::numeric(format!("loss evaluated to {value}")));
    }
    if let Some((i, g)) = gradient
        .iter()
        .enumerate()
        .find(|(_, g)| !g.is_finite())
    {
        return Err(Error::numeric(format!(
            "gradient coordinate {i} evaluated to {g}"
        )));
    }
    Ok((value, gradient))
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Largest relative error over the checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a rectifier pre-activation sat within
    /// 10·eps of its kink during the perturbed evaluations.
    pub skipped: usize,
}

/// Compares the analytic gradient against central differences
/// (f(p+eps·eᵢ) − f(p−eps·eᵢ)) / (2·eps), coordinate by coordinate.
///
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
/// Coordinates whose perturbed evaluations bring some rectifier
/// pre-activation within 10·eps of zero are skipped: the subgradient there
/// is ambiguous by construction, not a gradient bug.
pub fn grad_check(loss: &dyn Loss, params: &[f64], eps: f64) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::domain(format!(
            "eps must lie in [1e-7, 1e-3], got {eps}"
        )));
    }
    let (_, analytic) = grad(loss, params)?;
    let kink_zone = 10.0 * eps;

    let mut perturbed = params.to_vec();
    let mut max_rel_error: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    for i in 0..params.len() {
        perturbed[i] = params[i] + eps;
        let plus = loss.value(&perturbed)?;
        perturbed[i] = params[i] - eps;
        let minus = loss.value(&perturbed)?;
        perturbed[i] = params[i];

        if plus.min_abs_preact < kink_zone || minus.min_abs_preact < kink_zone {
            skipped += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        max_rel_error = max_rel_error.max((analytic[i] - numeric).abs() / denom);
        checked += 1;
    }
    Ok(GradCheckReport {
        max_rel_error,
        checked,
        skipped,
    })
}
