//! MAP objective and its EM lower bound, both with full prior normalization
//! constants so `Q <= log posterior` holds as a literal numeric comparison.

use crate::error::{Error, Result};
use crate::math::{ln_gaussian_prior, ln_symmetric_dirichlet, log_sum_exp};

use super::steps::{joint_log_scores, TaskParams};
use super::types::{PriorHyperparams, Responsibilities, SupportSet};

/// `ln p(M, pi, A)`. With `tau = 0` the prototype prior is flat and omitted.
pub fn log_prior(params: &TaskParams, hyper: &PriorHyperparams) -> f64 {
    let mut total = 0.0;
    if hyper.tau > 0.0 {
        total += params
            .prototypes
            .iter()
            .map(|mu| ln_gaussian_prior(mu, hyper.tau))
            .sum::<f64>();
    }
    total += ln_symmetric_dirichlet(&params.class_prior, hyper.b);
    for a in &params.confusions {
        for t in 0..a.num_classes() {
            total += ln_symmetric_dirichlet(&a.column(t), hyper.c);
        }
    }
    total
}

fn scores(support: &SupportSet, params: &TaskParams) -> Result<Vec<f64>> {
    joint_log_scores(
        &support.annotations,
        Some((&support.embeddings, &params.prototypes)),
        &params.class_prior,
        &params.confusions,
    )
}

/// `ln p(U, Y | M, pi, A) + ln p(M, pi, A)` with the true labels marginalized.
pub fn log_posterior(
    support: &SupportSet,
    params: &TaskParams,
    hyper: &PriorHyperparams,
) -> Result<f64> {
    let k = support.num_classes();
    let s = scores(support, params)?;
    let likelihood: f64 = s.chunks(k).map(log_sum_exp).sum();
    let value = likelihood + log_prior(params, hyper);
    if value.is_nan() {
        return Err(Error::NonFinite("log posterior"));
    }
    Ok(value)
}

/// `Q = sum_nk lambda_nk ln(joint_nk / lambda_nk) + ln p(M, pi, A)`, using
/// `0 ln(x / 0) = 0`.
pub fn lower_bound_q(
    lambda: &Responsibilities,
    support: &SupportSet,
    params: &TaskParams,
    hyper: &PriorHyperparams,
) -> Result<f64> {
    let k = support.num_classes();
    if lambda.len() != support.len() || lambda.num_classes() != k {
        return Err(Error::DimensionMismatch {
            context: "responsibilities vs support",
            expected: support.len() * k,
            actual: lambda.as_flat().len(),
        });
    }
    let s = scores(support, params)?;
    let mut bound = 0.0;
    for (joint, w) in s.iter().zip(lambda.as_flat()) {
        if *w > 0.0 {
            bound += w * (joint - w.ln());
        }
    }
    let value = bound + log_prior(params, hyper);
    if value.is_nan() {
        return Err(Error::NonFinite("lower bound"));
    }
    Ok(value)
}
