//! Query negative log-likelihood under an adapted classifier.
//!
//! The loss is the mean over query points (not the sum), so the learning rate
//! does not scale with the query size.

use crate::em::AdaptedClassifier;
use crate::error::{Error, Result};
use crate::math::{log_sum_exp, squared_distance};

/// Gradient of [`query_loss`] w.r.t. everything it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryLossGrad {
    pub loss: f64,
    pub d_prototypes: Vec<Vec<f64>>,
    pub d_class_prior: Vec<f64>,
    pub d_queries: Vec<Vec<f64>>,
}

fn check(
    prototypes: &[Vec<f64>],
    class_prior: &[f64],
    queries: &[Vec<f64>],
    labels: &[usize],
) -> Result<()> {
    if queries.is_empty() {
        return Err(Error::EmptyQuery);
    }
    if queries.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "query labels",
            expected: queries.len(),
            actual: labels.len(),
        });
    }
    let k = prototypes.len();
    if class_prior.len() != k {
        return Err(Error::DimensionMismatch {
            context: "class prior",
            expected: k,
            actual: class_prior.len(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::AnnotationOutOfRange(format!("query label {l} with K={k}")));
    }
    let dim = prototypes.first().map_or(0, Vec::len);
    if let Some(q) = queries.iter().find(|q| q.len() != dim) {
        return Err(Error::DimensionMismatch {
            context: "query embedding",
            expected: dim,
            actual: q.len(),
        });
    }
    Ok(())
}

fn scores(prototypes: &[Vec<f64>], ln_prior: &[f64], v: &[f64]) -> Vec<f64> {
    prototypes
        .iter()
        .zip(ln_prior)
        .map(|(mu, lp)| -0.5 * squared_distance(v, mu) + lp)
        .collect()
}

/// `-(1/N_Q) sum_n ln p(t_n | v_n)` with `ln p(t=k|v) = score_k - lse(score)`.
pub fn query_loss(
    classifier: &AdaptedClassifier,
    queries: &[Vec<f64>],
    labels: &[usize],
) -> Result<f64> {
    let (m, p) = (&classifier.prototypes, &classifier.class_prior);
    check(m, p, queries, labels)?;
    let ln_prior: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    let total: f64 = queries
        .iter()
        .zip(labels)
        .map(|(v, &t)| {
            let s = scores(m, &ln_prior, v);
            log_sum_exp(&s) - s[t]
        })
        .sum();
    Ok(total / queries.len() as f64)
}

pub fn query_loss_grad(
    prototypes: &[Vec<f64>],
    class_prior: &[f64],
    queries: &[Vec<f64>],
    labels: &[usize],
) -> Result<QueryLossGrad> {
    check(prototypes, class_prior, queries, labels)?;
    let k = prototypes.len();
    let dim = prototypes.first().map_or(0, Vec::len);
    let scale = 1.0 / queries.len() as f64;
    let ln_prior: Vec<f64> = class_prior.iter().map(|x| x.ln()).collect();
    let mut d_prototypes = vec![vec![0.0; dim]; k];
    let mut d_class_prior = vec![0.0; k];
    let mut d_queries = Vec::with_capacity(queries.len());
    let mut loss = 0.0;
    for (v, &t) in queries.iter().zip(labels) {
        let s = scores(prototypes, &ln_prior, v);
        let lse = log_sum_exp(&s);
        loss += lse - s[t];
        let mut dv = vec![0.0; dim];
        for j in 0..k {
            // d loss / d score_j
            let g = scale * ((s[j] - lse).exp() - if j == t { 1.0 } else { 0.0 });
            d_class_prior[j] += g / class_prior[j];
            for d in 0..dim {
                let diff = v[d] - prototypes[j][d];
                d_prototypes[j][d] += g * diff;
                dv[d] -= g * diff;
            }
        }
        d_queries.push(dv);
    }
    Ok(QueryLossGrad {
        loss: loss * scale,
        d_prototypes,
        d_class_prior,
        d_queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{PriorHyperparams, Responsibilities};
    use crate::rng::from_seed;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn classifier(protos: Vec<Vec<f64>>, prior: Vec<f64>) -> AdaptedClassifier {
        let k = prior.len();
        AdaptedClassifier {
            prototypes: protos,
            class_prior: prior,
            confusions: vec![],
            responsibilities: Responsibilities::from_flat(k, vec![]),
            hyper: PriorHyperparams::default(),
        }
    }

    #[test]
    fn collapsed_prototypes_give_ln_k() {
        let c = classifier(vec![vec![0.5, 0.5]; 4], vec![0.25; 4]);
        let q = vec![vec![1.0, -2.0], vec![0.0, 3.0]];
        assert_relative_eq!(query_loss(&c, &q, &[0, 3]).unwrap(), 4f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn loss_shrinks_with_separation() {
        let mut last = 2f64.ln();
        for dist in [0.5, 1.0, 2.0, 4.0] {
            let c = classifier(vec![vec![0.0], vec![dist]], vec![0.5, 0.5]);
            let l = query_loss(&c, &[vec![0.0]], &[0]).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn empty_query_is_an_error() {
        let c = classifier(vec![vec![0.0]], vec![1.0]);
        assert_eq!(query_loss(&c, &[], &[]), Err(Error::EmptyQuery));
    }

    #[test]
    fn matches_naive_linear_space_sum() {
        let mut rng = from_seed(21);
        let k = 3;
        let protos: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let prior = vec![0.2, 0.3, 0.5];
        let queries: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..6).map(|i| i % k).collect();
        let c = classifier(protos.clone(), prior.clone());
        let mut naive = 0.0;
        for (v, &t) in queries.iter().zip(&labels) {
            let w: Vec<f64> = protos
                .iter()
                .zip(&prior)
                .map(|(m, p)| {
                    let d2: f64 = v.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum();
                    (-0.5 * d2).exp() * p
                })
                .collect();
            naive -= (w[t] / w.iter().sum::<f64>()).ln();
        }
        naive /= queries.len() as f64;
        let got = query_loss(&c, &queries, &labels).unwrap();
        assert!((got - naive).abs() < 1e-12, "{got} vs {naive}");
        let g = query_loss_grad(&protos, &prior, &queries, &labels).unwrap();
        assert!((g.loss - naive).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let protos = vec![vec![0.3, -1.0], vec![1.2, 0.4], vec![-0.5, 0.9]];
        let prior = vec![0.5, 0.3, 0.2];
        let queries = vec![vec![0.1, 0.2], vec![1.0, -0.3]];
        let labels = vec![1, 2];
        let g = query_loss_grad(&protos, &prior, &queries, &labels).unwrap();
        let f = |p: &[Vec<f64>], pi: &[f64], q: &[Vec<f64>]| {
            query_loss_grad(p, pi, q, &labels).unwrap().loss
        };
        let h = 1e-6;
        for j in 0..3 {
            for d in 0..2 {
                let mut a = protos.clone();
                a[j][d] += h;
                let mut b = protos.clone();
                b[j][d] -= h;
                let fd = (f(&a, &prior, &queries) - f(&b, &prior, &queries)) / (2.0 * h);
                assert_relative_eq!(g.d_prototypes[j][d], fd, epsilon = 1e-8);
            }
            let mut a = prior.clone();
            a[j] += h;
            let mut b = prior.clone();
            b[j] -= h;
            let fd = (f(&protos, &a, &queries) - f(&protos, &b, &queries)) / (2.0 * h);
            assert_relative_eq!(g.d_class_prior[j], fd, epsilon = 1e-7);
        }
        for n in 0..2 {
            for d in 0..2 {
                let mut a = queries.clone();
                a[n][d] += h;
                let mut b = queries.clone();
                b[n][d] -= h;
                let fd = (f(&protos, &prior, &a) - f(&protos, &prior, &b)) / (2.0 * h);
                assert_relative_eq!(g.d_queries[n][d], fd, epsilon = 1e-8);
            }
        }
    }
}
