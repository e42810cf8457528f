//! EM adaptation recorded for reverse-mode differentiation.
//!
//! The forward pass performs exactly the iterations of [`crate::em::adapt`]
//! and keeps every iteration's input responsibilities and M-step output. The
//! backward pass propagates gradients on the final prototypes and class prior
//! back through each {M, E} pair to the support embeddings. Annotations are
//! discrete constants, so the vote initialization carries no gradient.

use crate::em::{
    e_step, init_responsibilities, m_step, AdaptedClassifier, PriorHyperparams, Responsibilities,
    SupportSet, TaskParams,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Iteration {
    lambda_in: Responsibilities,
    params: TaskParams,
    /// `tau + sum_n lambda_nk`.
    proto_denom: Vec<f64>,
    /// `sum_{n in I^r} lambda_nk + K c`, per annotator.
    confusion_denom: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct UnrolledEm {
    iterations: Vec<Iteration>,
    final_lambda: Responsibilities,
    hyper: PriorHyperparams,
}

impl UnrolledEm {
    pub fn forward(support: &SupportSet, hyper: &PriorHyperparams) -> Result<Self> {
        let k = support.num_classes();
        let mut lambda = init_responsibilities(&support.annotations)?;
        let mut iterations = Vec::with_capacity(hyper.em_steps);
        for _ in 0..hyper.em_steps.max(1) {
            let params = m_step(&lambda, support, hyper)?;
            let proto_denom = lambda.class_mass().iter().map(|s| hyper.tau + s).collect();
            let mut confusion_denom =
                vec![vec![k as f64 * hyper.c; k]; support.annotations.num_annotators()];
            for (n, labels) in support.annotations.iter().enumerate() {
                for &(r, _) in labels {
                    for t in 0..k {
                        confusion_denom[r][t] += lambda.get(n, t);
                    }
                }
            }
            let next = e_step(support, &params)?;
            iterations.push(Iteration {
                lambda_in: std::mem::replace(&mut lambda, next),
                params,
                proto_denom,
                confusion_denom,
            });
        }
        Ok(Self {
            iterations,
            final_lambda: lambda,
            hyper: *hyper,
        })
    }

    /// The classifier this run produced, identical to [`crate::em::adapt`].
    pub fn classifier(&self) -> AdaptedClassifier {
        let last = &self.iterations.last().expect("at least one iteration").params;
        AdaptedClassifier {
            prototypes: last.prototypes.clone(),
            class_prior: last.class_prior.clone(),
            confusions: last.confusions.clone(),
            responsibilities: self.final_lambda.clone(),
            hyper: self.hyper,
        }
    }

    pub fn final_params(&self) -> &TaskParams {
        &self.iterations.last().expect("at least one iteration").params
    }

    /// Gradient w.r.t. the support embeddings, given gradients w.r.t. the
    /// final prototypes and class prior.
    pub fn backward(
        &self,
        support: &SupportSet,
        d_prototypes: &[Vec<f64>],
        d_class_prior: &[f64],
    ) -> Result<Vec<Vec<f64>>> {
        let k = support.num_classes();
        let n_s = support.len();
        let dim = support.dim();
        let r_count = support.annotations.num_annotators();
        if d_prototypes.len() != k || d_class_prior.len() != k {
            return Err(Error::DimensionMismatch {
                context: "adaptation output gradient",
                expected: k,
                actual: d_prototypes.len().min(d_class_prior.len()),
            });
        }
        let u = &support.embeddings;
        let mut d_u = vec![vec![0.0; dim]; n_s];
        let mut g_mu: Vec<Vec<f64>> = d_prototypes.to_vec();
        let mut g_pi: Vec<f64> = d_class_prior.to_vec();
        let mut g_alpha: Vec<Vec<f64>> = vec![vec![0.0; k * k]; r_count];
        let pi_denom = k as f64 * self.hyper.b + n_s as f64;

        for j in (0..self.iterations.len()).rev() {
            let it = &self.iterations[j];
            let lambda = &it.lambda_in;
            let p = &it.params;

            // M step: (mu, pi, alpha) <- (lambda, U)
            let mut g_lambda = vec![0.0; n_s * k];
            for t in 0..k {
                let denom = it.proto_denom[t];
                for n in 0..n_s {
                    let mut dot = 0.0;
                    for d in 0..dim {
                        dot += g_mu[t][d] * (u[n][d] - p.prototypes[t][d]);
                    }
                    g_lambda[n * k + t] += dot / denom + g_pi[t] / pi_denom;
                    let w = lambda.get(n, t) / denom;
                    if w != 0.0 {
                        for d in 0..dim {
                            d_u[n][d] += g_mu[t][d] * w;
                        }
                    }
                }
            }
            // sum_l g_alpha[l, t] alpha[l, t] per annotator and class
            let mut alpha_dot = vec![vec![0.0; k]; r_count];
            for r in 0..r_count {
                let a = &p.confusions[r];
                for t in 0..k {
                    alpha_dot[r][t] = (0..k).map(|l| g_alpha[r][l * k + t] * a.get(l, t)).sum();
                }
            }
            for (n, labels) in support.annotations.iter().enumerate() {
                for &(r, y) in labels {
                    for t in 0..k {
                        g_lambda[n * k + t] +=
                            (g_alpha[r][y * k + t] - alpha_dot[r][t]) / it.confusion_denom[r][t];
                    }
                }
            }

            if j == 0 {
                break;
            }

            // E step of the previous iteration: lambda = softmax(L(prev, U))
            let prev = &self.iterations[j - 1].params;
            let mut next_mu = vec![vec![0.0; dim]; k];
            let mut next_pi = vec![0.0; k];
            let mut next_alpha = vec![vec![0.0; k * k]; r_count];
            for n in 0..n_s {
                let row = lambda.row(n);
                let mean: f64 = (0..k).map(|t| row[t] * g_lambda[n * k + t]).sum();
                for t in 0..k {
                    let g_l = row[t] * (g_lambda[n * k + t] - mean);
                    if g_l == 0.0 {
                        continue;
                    }
                    for d in 0..dim {
                        let diff = u[n][d] - prev.prototypes[t][d];
                        d_u[n][d] -= g_l * diff;
                        next_mu[t][d] += g_l * diff;
                    }
                    next_pi[t] += g_l / prev.class_prior[t];
                    for &(r, y) in support.annotations.example(n) {
                        next_alpha[r][y * k + t] += g_l / prev.confusions[r].get(y, t);
                    }
                }
            }
            g_mu = next_mu;
            g_pi = next_pi;
            g_alpha = next_alpha;
        }
        Ok(d_u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{adapt, Annotations};
    use crate::rng::from_seed;
    use rand::Rng;

    fn random_support(n: usize, k: usize, r: usize, dim: usize, seed: u64) -> SupportSet {
        let mut rng = from_seed(seed);
        let emb = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let labels: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..r).map(|_| if rng.random::<f64>() < 0.6 { i % k } else { rng.random_range(0..k) }).collect())
            .collect();
        SupportSet::new(emb, Annotations::dense(k, &labels).unwrap()).unwrap()
    }

    #[test]
    fn forward_matches_adapt() {
        let s = random_support(7, 3, 2, 2, 1);
        let h = PriorHyperparams::new(1.0, 2.0, 1.0, 3).unwrap();
        assert_eq!(UnrolledEm::forward(&s, &h).unwrap().classifier(), adapt(&s, &h).unwrap());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (j, k, r) in [(1, 2, 1), (2, 3, 2), (3, 4, 3), (5, 3, 1)] {
            let s = random_support(6, k, r, 3, 40 + j as u64);
            let h = PriorHyperparams::new(1.0, 1.5, 1.0, j).unwrap();
            let mut rng = from_seed(99);
            // scalar objective: <w_mu, mu> + <w_pi, ln pi>
            let w_mu: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let w_pi: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let objective = |s: &SupportSet| {
                let c = adapt(s, &h).unwrap();
                let a: f64 = c
                    .prototypes
                    .iter()
                    .zip(&w_mu)
                    .map(|(m, w)| m.iter().zip(w).map(|(x, y)| x * y).sum::<f64>())
                    .sum();
                a + c.class_prior.iter().zip(&w_pi).map(|(p, w)| p.ln() * w).sum::<f64>()
            };
            let run = UnrolledEm::forward(&s, &h).unwrap();
            let pi = &run.final_params().class_prior;
            let d_pi: Vec<f64> = w_pi.iter().zip(pi).map(|(w, p)| w / p).collect();
            let grad = run.backward(&s, &w_mu, &d_pi).unwrap();
            let step = 1e-6;
            for n in 0..s.len() {
                for d in 0..3 {
                    let mut plus = s.clone();
                    plus.embeddings[n][d] += step;
                    let mut minus = s.clone();
                    minus.embeddings[n][d] -= step;
                    let fd = (objective(&plus) - objective(&minus)) / (2.0 * step);
                    let err = (fd - grad[n][d]).abs() / fd.abs().max(grad[n][d].abs()).max(1e-6);
                    assert!(err < 1e-6, "J={j} n={n} d={d}: fd {fd} vs {}", grad[n][d]);
                }
            }
        }
    }
}
