//! Latent-space probabilistic model and its closed-form EM adaptation.
//!
//! Each support example is an embedding `u_n` with labels from a subset of
//! annotators. True classes are latent; class `k` emits `u ~ N(mu_k, I)` and
//! annotator `r` reports label `l` with probability `alpha^r_lk`. Conjugate
//! priors (Gaussian on prototypes, Dirichlet on the class prior and on every
//! confusion column) make both EM steps closed-form.
//!
//! All probability products are accumulated in log space; the E step
//! normalizes with a max-shifted log-sum-exp.

mod objective;
mod steps;
mod types;

pub use objective::{log_posterior, log_prior, lower_bound_q};
pub use steps::{
    annotation_likelihood, e_step, init_responsibilities, log_annotation_likelihood, m_step,
    update_class_prior, update_confusions, update_prototypes, TaskParams,
};
pub(crate) use steps::{joint_log_scores, normalize_scores};
pub use types::{
    AdaptedClassifier, Annotations, ConfusionMatrix, PriorHyperparams, Responsibilities,
    SupportSet,
};

use crate::error::{Error, Result};
use crate::math::{argmax, log_sum_exp, squared_distance};

/// Runs vote initialization followed by `hyper.em_steps` iterations of
/// {M step, E step}. The returned parameters come from the last M step and the
/// responsibilities from the last E step.
pub fn adapt(support: &SupportSet, hyper: &PriorHyperparams) -> Result<AdaptedClassifier> {
    let mut lambda = init_responsibilities(&support.annotations)?;
    let mut params = None;
    for _ in 0..hyper.em_steps.max(1) {
        let p = m_step(&lambda, support, hyper)?;
        lambda = e_step(support, &p)?;
        params = Some(p);
    }
    let params = params.expect("at least one EM iteration");
    Ok(AdaptedClassifier {
        prototypes: params.prototypes,
        class_prior: params.class_prior,
        confusions: params.confusions,
        responsibilities: lambda,
        hyper: *hyper,
    })
}

impl AdaptedClassifier {
    pub fn params(&self) -> TaskParams {
        TaskParams {
            prototypes: self.prototypes.clone(),
            class_prior: self.class_prior.clone(),
            confusions: self.confusions.clone(),
        }
    }
}

/// Unnormalized class scores `-0.5 ||u - mu_k||^2 + ln pi_k`.
pub fn class_scores(u: &[f64], classifier: &AdaptedClassifier) -> Result<Vec<f64>> {
    if u.len() != classifier.dim() {
        return Err(Error::DimensionMismatch {
            context: "query embedding",
            expected: classifier.dim(),
            actual: u.len(),
        });
    }
    Ok(classifier
        .prototypes
        .iter()
        .zip(&classifier.class_prior)
        .map(|(mu, pi)| -0.5 * squared_distance(u, mu) + pi.ln())
        .collect())
}

/// Normalized log class probabilities for a new embedding.
pub fn predict_log_probs(u: &[f64], classifier: &AdaptedClassifier) -> Result<Vec<f64>> {
    let mut scores = class_scores(u, classifier)?;
    let lse = log_sum_exp(&scores);
    for s in scores.iter_mut() {
        *s -= lse;
    }
    Ok(scores)
}

/// Most probable class, ties broken by lowest index.
pub fn predict_label(u: &[f64], classifier: &AdaptedClassifier) -> Result<usize> {
    Ok(argmax(&class_scores(u, classifier)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

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
    fn equidistant_query_has_uniform_log_probs() {
        let c = classifier(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![0.5, 0.5]);
        let lp = predict_log_probs(&[0.0, 3.0], &c).unwrap();
        assert_relative_eq!(lp[0], 0.5f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(lp[1], 0.5f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn nearest_prototype_wins_under_uniform_prior() {
        let c = classifier(vec![vec![0.0, 0.0], vec![10.0, 10.0]], vec![0.5, 0.5]);
        assert_eq!(predict_label(&[0.0, 0.0], &c).unwrap(), 0);
    }

    #[test]
    fn prior_tilts_equidistant_query() {
        let c = classifier(vec![vec![1.0], vec![-1.0]], vec![0.9, 0.1]);
        let lp = predict_log_probs(&[0.0], &c).unwrap();
        assert_eq!(predict_label(&[0.0], &c).unwrap(), 0);
        assert_relative_eq!(lp[0] - lp[1], 9f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn prediction_rejects_wrong_dimension() {
        let c = classifier(vec![vec![1.0], vec![-1.0]], vec![0.5, 0.5]);
        assert!(predict_log_probs(&[0.0, 1.0], &c).is_err());
    }

    #[test]
    fn clean_labels_with_zero_tau_give_class_means() {
        let emb = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 0.0], vec![-3.0, 2.0]];
        let ann = Annotations::dense(2, &[vec![0, 0], vec![0, 0], vec![1, 1], vec![1, 1]]).unwrap();
        let support = SupportSet::new(emb, ann).unwrap();
        let hyper = PriorHyperparams::with_zero_tau(1.0, 1.0, 1).unwrap();
        let c = adapt(&support, &hyper).unwrap();
        assert_eq!(c.prototypes[0], vec![2.0, 3.0]);
        assert_eq!(c.prototypes[1], vec![-2.0, 1.0]);
    }

    #[test]
    fn adapt_matches_manual_composition() {
        let emb = vec![vec![0.3, 1.0], vec![2.0, -1.0], vec![-0.5, 0.2]];
        let ann = Annotations::dense(2, &[vec![0, 1], vec![1, 1], vec![0, 0]]).unwrap();
        let support = SupportSet::new(emb, ann).unwrap();
        let hyper = PriorHyperparams::new(1.0, 2.0, 1.0, 2).unwrap();
        let c = adapt(&support, &hyper).unwrap();
        let l0 = init_responsibilities(&support.annotations).unwrap();
        let p1 = m_step(&l0, &support, &hyper).unwrap();
        let l1 = e_step(&support, &p1).unwrap();
        let p2 = m_step(&l1, &support, &hyper).unwrap();
        let l2 = e_step(&support, &p2).unwrap();
        assert_eq!(c.prototypes, p2.prototypes);
        assert_eq!(c.class_prior, p2.class_prior);
        assert_eq!(c.confusions, p2.confusions);
        assert_eq!(c.responsibilities, l2);
    }

    #[test]
    fn single_class_log_posterior_closed_form() {
        let u = vec![0.5, -1.5];
        let ann = Annotations::dense(1, &[vec![0]]).unwrap();
        let support = SupportSet::new(vec![u.clone()], ann).unwrap();
        let hyper = PriorHyperparams::new(2.0, 1.0, 1.0, 1).unwrap();
        let mu = vec![0.1, 0.2];
        let params = TaskParams {
            prototypes: vec![mu.clone()],
            class_prior: vec![1.0],
            confusions: vec![ConfusionMatrix::identity(1)],
        };
        let lp = log_posterior(&support, &params, &hyper).unwrap();
        let two_pi = 2.0 * std::f64::consts::PI;
        let d2: f64 = u.iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum();
        let ln_lik = -(two_pi).ln() - 0.5 * d2;
        let m2: f64 = mu.iter().map(|x| x * x).sum();
        let ln_mu_prior = (2.0 / two_pi).ln() - 0.5 * 2.0 * m2;
        // K = 1 Dirichlet terms: Gamma(b+1)/Gamma(b+1) = 1, so ln density 0.
        assert_relative_eq!(lp, ln_lik + ln_mu_prior, epsilon = 1e-12);
    }
}
