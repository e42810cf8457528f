//! Log-domain helpers.

use std::f64::consts::PI;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Stable `ln(sum(exp(values)))`. Returns `-inf` for empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log scores in place into probabilities, returning the
/// log-normalizer.
pub fn softmax_in_place(scores: &mut [f64]) -> f64 {
    let lse = log_sum_exp(scores);
    for s in scores.iter_mut() {
        *s = (*s - lse).exp();
    }
    lse
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Isotropic unit-variance Gaussian log-density `ln N(u | mean, I)`.
pub fn ln_unit_gaussian(u: &[f64], mean: &[f64]) -> f64 {
    -0.5 * (u.len() as f64) * LN_2PI - 0.5 * squared_distance(u, mean)
}

/// `ln N(mu | 0, tau^{-1} I)`.
pub fn ln_gaussian_prior(mu: &[f64], tau: f64) -> f64 {
    let m = mu.len() as f64;
    let norm: f64 = mu.iter().map(|x| x * x).sum();
    0.5 * m * (tau / (2.0 * PI)).ln() - 0.5 * tau * norm
}

/// Log-density of a symmetric Dirichlet written as `prod_k p_k^exponent`,
/// i.e. concentration `exponent + 1` for each of the `p.len()` entries.
pub fn ln_symmetric_dirichlet(p: &[f64], exponent: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let k = p.len() as f64;
    let norm = ln_gamma(k * (exponent + 1.0)) - k * ln_gamma(exponent + 1.0);
    norm + exponent * p.iter().map(|x| x.ln()).sum::<f64>()
}

/// Index of the maximum, ties broken by lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lse_matches_naive_and_survives_large_inputs() {
        let v = [0.1, -2.0, 1.5];
        let naive = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert_relative_eq!(log_sum_exp(&v), naive, epsilon = 1e-14);
        assert_relative_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln());
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn uniform_dirichlet_is_flat() {
        // exponent 0 is Dirichlet(1,...,1) with density (K-1)!
        let p = [0.2, 0.3, 0.5];
        assert_relative_eq!(ln_symmetric_dirichlet(&p, 0.0), 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
