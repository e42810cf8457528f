//! Label-aggregation baselines: majority voting, Dawid-Skene EM with the same
//! conjugate priors as the latent-space model, and prototype classifiers built
//! from aggregated labels.

use crate::em::{
    init_responsibilities, joint_log_scores, normalize_scores, update_class_prior,
    update_confusions, AdaptedClassifier, Annotations, ConfusionMatrix, PriorHyperparams,
    Responsibilities,
};
use crate::error::{Error, Result};
use crate::math::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct MajorityVote {
    /// Plurality label, ties to the lowest class index.
    pub labels: Vec<usize>,
    /// Vote fractions per example.
    pub fractions: Responsibilities,
}

pub fn majority_vote(annotations: &Annotations) -> Result<MajorityVote> {
    let fractions = init_responsibilities(annotations)?;
    let labels = fractions.rows().map(argmax).collect();
    Ok(MajorityVote { labels, fractions })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DawidSkene {
    pub soft_labels: Responsibilities,
    pub class_prior: Vec<f64>,
    pub confusions: Vec<ConfusionMatrix>,
}

impl DawidSkene {
    pub fn hard_labels(&self) -> Vec<usize> {
        self.soft_labels.rows().map(argmax).collect()
    }
}

/// Dawid-Skene EM: the latent-space model with the Gaussian factor removed.
/// Vote-fraction initialization, then `hyper.em_steps` {M, E} iterations.
pub fn dawid_skene(annotations: &Annotations, hyper: &PriorHyperparams) -> Result<DawidSkene> {
    let k = annotations.num_classes();
    let mut lambda = init_responsibilities(annotations)?;
    let mut class_prior = vec![1.0 / k as f64; k];
    let mut confusions = vec![];
    for _ in 0..hyper.em_steps.max(1) {
        class_prior = update_class_prior(&lambda, hyper.b);
        confusions = update_confusions(&lambda, annotations, hyper.c);
        let scores = joint_log_scores(annotations, None, &class_prior, &confusions)?;
        lambda = normalize_scores(k, scores)?;
    }
    Ok(DawidSkene {
        soft_labels: lambda,
        class_prior,
        confusions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeClassifier {
    pub classifier: AdaptedClassifier,
    /// Classes with zero total weight; their prototype is the zero vector.
    pub empty_classes: Vec<usize>,
}

/// Prototypes `mu_k = sum_n w_nk u_n / (tau + sum_n w_nk)` and a class prior
/// `(sum_n w_nk + b) / (K b + N)` from hard (one-hot) or soft label weights.
pub fn prototype_from_labels(
    embeddings: &[Vec<f64>],
    weights: &Responsibilities,
    tau: f64,
    b: f64,
) -> Result<PrototypeClassifier> {
    if embeddings.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            context: "embeddings vs label weights",
            expected: weights.len(),
            actual: embeddings.len(),
        });
    }
    let k = weights.num_classes();
    let dim = embeddings.first().map_or(0, Vec::len);
    let mass = weights.class_mass();
    let mut prototypes = vec![vec![0.0; dim]; k];
    for (n, u) in embeddings.iter().enumerate() {
        if u.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "support embedding",
                expected: dim,
                actual: u.len(),
            });
        }
        for (t, proto) in prototypes.iter_mut().enumerate() {
            let w = weights.get(n, t);
            for (p, x) in proto.iter_mut().zip(u) {
                *p += w * x;
            }
        }
    }
    let mut empty_classes = vec![];
    for (t, proto) in prototypes.iter_mut().enumerate() {
        if mass[t] <= 0.0 {
            empty_classes.push(t);
            proto.iter_mut().for_each(|p| *p = 0.0);
            continue;
        }
        let denom = tau + mass[t];
        proto.iter_mut().for_each(|p| *p /= denom);
    }
    let class_prior = update_class_prior(weights, b);
    let hyper = PriorHyperparams {
        tau,
        b,
        em_steps: 1,
        ..PriorHyperparams::default()
    };
    Ok(PrototypeClassifier {
        classifier: AdaptedClassifier {
            prototypes,
            class_prior,
            confusions: vec![],
            responsibilities: weights.clone(),
            hyper,
        },
        empty_classes,
    })
}

/// One-hot weights for hard labels.
pub fn one_hot(labels: &[usize], k: usize) -> Responsibilities {
    let mut data = vec![0.0; labels.len() * k];
    for (n, &l) in labels.iter().enumerate() {
        data[n * k + l] = 1.0;
    }
    Responsibilities::from_flat(k, data)
}

pub fn label_accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{adapt, m_step, SupportSet};
    use approx::assert_relative_eq;

    #[test]
    fn majority_vote_plurality_and_ties() {
        let a = Annotations::dense(2, &[vec![0, 0, 1], vec![0, 1, 1], vec![1, 0, 0]]).unwrap();
        assert_eq!(majority_vote(&a).unwrap().labels, vec![0, 1, 0]);
        let tie = Annotations::dense(2, &[vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(majority_vote(&tie).unwrap().labels, vec![0, 0]);
    }

    #[test]
    fn unanimous_votes_recover_truth() {
        let truth = [2usize, 0, 1, 1];
        let a = Annotations::dense(3, &truth.iter().map(|t| vec![*t; 3]).collect::<Vec<_>>())
            .unwrap();
        assert_eq!(majority_vote(&a).unwrap().labels, truth);
    }

    #[test]
    fn unannotated_example_rejected() {
        assert!(Annotations::new(2, 1, vec![vec![]]).is_err());
    }

    #[test]
    fn single_annotator_one_step_gives_smoothed_votes() {
        let labels = [0usize, 1, 1, 0, 1];
        let a = Annotations::dense(2, &labels.iter().map(|l| vec![*l]).collect::<Vec<_>>())
            .unwrap();
        let hyper = PriorHyperparams::new(1.0, 1.0, 1.0, 1).unwrap();
        let ds = dawid_skene(&a, &hyper).unwrap();
        // counts: class0 -> 2 examples all labeled 0, class1 -> 3 labeled 1
        let pi = [(2.0 + 1.0) / 7.0, (3.0 + 1.0) / 7.0];
        let alpha = [[3.0 / 4.0, 1.0 / 5.0], [1.0 / 4.0, 4.0 / 5.0]];
        for (n, &l) in labels.iter().enumerate() {
            let s0 = pi[0] * alpha[l][0];
            let s1 = pi[1] * alpha[l][1];
            assert_relative_eq!(ds.soft_labels.get(n, 0), s0 / (s0 + s1), epsilon = 1e-14);
            assert_eq!(ds.hard_labels()[n], l);
        }
    }

    #[test]
    fn ds_matches_latent_model_with_zero_embeddings() {
        let a = Annotations::dense(
            3,
            &[vec![0, 1, 0], vec![2, 2, 1], vec![1, 1, 1], vec![0, 2, 0], vec![2, 0, 2]],
        )
        .unwrap();
        let hyper = PriorHyperparams::new(1.0, 2.0, 1.0, 4).unwrap();
        let ds = dawid_skene(&a, &hyper).unwrap();
        let support = SupportSet::new(vec![vec![0.0, 0.0]; 5], a).unwrap();
        let full = adapt(&support, &hyper).unwrap();
        for (x, y) in ds
            .soft_labels
            .as_flat()
            .iter()
            .zip(full.responsibilities.as_flat())
        {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mv_labels_are_argmax_of_ds_initialization() {
        let a = Annotations::dense(3, &[vec![0, 1, 1], vec![2, 2, 0], vec![1, 0, 2]]).unwrap();
        let init = init_responsibilities(&a).unwrap();
        let mv = majority_vote(&a).unwrap();
        assert_eq!(mv.labels, init.rows().map(argmax).collect::<Vec<_>>());
    }

    #[test]
    fn hard_labels_zero_tau_give_class_means() {
        let emb = vec![vec![1.0], vec![3.0], vec![10.0]];
        let pc = prototype_from_labels(&emb, &one_hot(&[0, 0, 1], 2), 0.0, 1.0).unwrap();
        assert_eq!(pc.classifier.prototypes, vec![vec![2.0], vec![10.0]]);
        assert!(pc.empty_classes.is_empty());
    }

    #[test]
    fn soft_weights_share_the_m_step_formula() {
        let emb = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, 0.3]];
        let w = Responsibilities::from_rows(&[
            vec![0.7, 0.3],
            vec![0.1, 0.9],
            vec![0.5, 0.5],
        ])
        .unwrap();
        let pc = prototype_from_labels(&emb, &w, 1.0, 1.0).unwrap();
        let ann = Annotations::dense(2, &[vec![0], vec![1], vec![0]]).unwrap();
        let support = SupportSet::new(emb, ann).unwrap();
        let p = m_step(&w, &support, &PriorHyperparams::new(1.0, 1.0, 1.0, 1).unwrap()).unwrap();
        assert_eq!(pc.classifier.prototypes, p.prototypes);
        assert_eq!(pc.classifier.class_prior, p.class_prior);
    }

    #[test]
    fn empty_class_is_flagged_with_zero_prototype() {
        let emb = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
        let pc = prototype_from_labels(&emb, &one_hot(&[0, 0], 2), 0.0, 1.0).unwrap();
        assert_eq!(pc.empty_classes, vec![1]);
        assert_eq!(pc.classifier.prototypes[1], vec![0.0, 0.0]);
    }
}
