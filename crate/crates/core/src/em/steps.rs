use crate::error::{invalid, Error, Result};
use crate::math::{ln_unit_gaussian, softmax_in_place};

use super::types::{Annotations, ConfusionMatrix, PriorHyperparams, Responsibilities, SupportSet};

/// Task-specific parameters produced by an M step.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskParams {
    pub prototypes: Vec<Vec<f64>>,
    pub class_prior: Vec<f64>,
    pub confusions: Vec<ConfusionMatrix>,
}

/// Vote-fraction initialization: `lambda_nk = |{r in I_n : y_n^r = k}| / |I_n|`.
pub fn init_responsibilities(annotations: &Annotations) -> Result<Responsibilities> {
    let k = annotations.num_classes();
    let mut data = vec![0.0; annotations.len() * k];
    for (n, labels) in annotations.iter().enumerate() {
        if labels.is_empty() {
            return Err(Error::UnannotatedExample { index: n });
        }
        let weight = 1.0 / labels.len() as f64;
        for &(_, l) in labels {
            data[n * k + l] += weight;
        }
    }
    Ok(Responsibilities::from_flat(k, data))
}

fn check_shapes(lambda: &Responsibilities, annotations: &Annotations) -> Result<()> {
    if lambda.len() != annotations.len() {
        return Err(Error::DimensionMismatch {
            context: "responsibility rows vs examples",
            expected: annotations.len(),
            actual: lambda.len(),
        });
    }
    if lambda.num_classes() != annotations.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "responsibility columns vs classes",
            expected: annotations.num_classes(),
            actual: lambda.num_classes(),
        });
    }
    Ok(())
}

/// `pi_k = (sum_n lambda_nk + b) / (K b + N)`.
pub fn update_class_prior(lambda: &Responsibilities, b: f64) -> Vec<f64> {
    let k = lambda.num_classes() as f64;
    let n = lambda.len() as f64;
    lambda
        .class_mass()
        .into_iter()
        .map(|s| (s + b) / (k * b + n))
        .collect()
}

/// `alpha_lk^r = (sum_{n in I^r} lambda_nk [y_n^r = l] + c) / (sum_{n in I^r} lambda_nk + K c)`.
///
/// An annotator who labeled nothing gets the uniform matrix.
pub fn update_confusions(
    lambda: &Responsibilities,
    annotations: &Annotations,
    c: f64,
) -> Vec<ConfusionMatrix> {
    let k = annotations.num_classes();
    let r_count = annotations.num_annotators();
    let mut counts = vec![vec![0.0; k * k]; r_count];
    let mut mass = vec![vec![0.0; k]; r_count];
    let mut labeled = vec![false; r_count];
    for (n, labels) in annotations.iter().enumerate() {
        let row = lambda.row(n);
        for &(r, l) in labels {
            labeled[r] = true;
            for t in 0..k {
                counts[r][l * k + t] += row[t];
                mass[r][t] += row[t];
            }
        }
    }
    (0..r_count)
        .map(|r| {
            if !labeled[r] {
                return ConfusionMatrix::uniform(k);
            }
            let mut entries = counts[r].clone();
            for l in 0..k {
                for t in 0..k {
                    entries[l * k + t] = (entries[l * k + t] + c) / (mass[r][t] + k as f64 * c);
                }
            }
            ConfusionMatrix::from_entries_unchecked(k, entries)
        })
        .collect()
}

/// `mu_k = sum_n lambda_nk u_n / (tau + sum_n lambda_nk)`.
pub fn update_prototypes(
    lambda: &Responsibilities,
    embeddings: &[Vec<f64>],
    tau: f64,
) -> Result<Vec<Vec<f64>>> {
    let k = lambda.num_classes();
    let dim = embeddings.first().map_or(0, Vec::len);
    let mass = lambda.class_mass();
    let mut protos = vec![vec![0.0; dim]; k];
    for (n, u) in embeddings.iter().enumerate() {
        if u.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "support embedding",
                expected: dim,
                actual: u.len(),
            });
        }
        for (t, proto) in protos.iter_mut().enumerate() {
            let w = lambda.get(n, t);
            if w != 0.0 {
                for (p, x) in proto.iter_mut().zip(u) {
                    *p += w * x;
                }
            }
        }
    }
    for (t, proto) in protos.iter_mut().enumerate() {
        let denom = tau + mass[t];
        if denom <= 0.0 {
            return Err(invalid(
                "tau",
                format!("class {t} has no mass and tau = 0; prototype undefined"),
            ));
        }
        for p in proto.iter_mut() {
            *p /= denom;
        }
    }
    Ok(protos)
}

/// Closed-form M step for prototypes, class prior and confusion matrices.
pub fn m_step(
    lambda: &Responsibilities,
    support: &SupportSet,
    hyper: &PriorHyperparams,
) -> Result<TaskParams> {
    check_shapes(lambda, &support.annotations)?;
    if support
        .embeddings
        .iter()
        .flatten()
        .any(|x| !x.is_finite())
    {
        return Err(Error::NonFinite("support embeddings"));
    }
    Ok(TaskParams {
        prototypes: update_prototypes(lambda, &support.embeddings, hyper.tau)?,
        class_prior: update_class_prior(lambda, hyper.b),
        confusions: update_confusions(lambda, &support.annotations, hyper.c),
    })
}

/// `ln a_nk = sum_{r in I_n} ln alpha^r_{y_n^r, k}`, shape `N x K` (flat).
pub fn log_annotation_likelihood(
    annotations: &Annotations,
    confusions: &[ConfusionMatrix],
) -> Result<Vec<f64>> {
    let k = annotations.num_classes();
    if confusions.len() != annotations.num_annotators() {
        return Err(Error::DimensionMismatch {
            context: "confusion matrices vs annotators",
            expected: annotations.num_annotators(),
            actual: confusions.len(),
        });
    }
    let mut out = vec![0.0; annotations.len() * k];
    for (n, labels) in annotations.iter().enumerate() {
        for &(r, l) in labels {
            let a = &confusions[r];
            if a.num_classes() != k {
                return Err(Error::DimensionMismatch {
                    context: "confusion size",
                    expected: k,
                    actual: a.num_classes(),
                });
            }
            for t in 0..k {
                let p = a.get(l, t);
                if p <= 0.0 {
                    return Err(Error::LogOfZero {
                        annotator: r,
                        label: l,
                        class: t,
                    });
                }
                out[n * k + t] += p.ln();
            }
        }
    }
    Ok(out)
}

/// `a_nk = p(Y_n | t_n = k, A)` as plain probabilities (rows of the flat `N x K` array).
pub fn annotation_likelihood(
    annotations: &Annotations,
    confusions: &[ConfusionMatrix],
) -> Result<Vec<Vec<f64>>> {
    let k = annotations.num_classes();
    let logs = log_annotation_likelihood(annotations, confusions)?;
    Ok(logs
        .chunks(k)
        .map(|row| row.iter().map(|v| v.exp()).collect())
        .collect())
}

/// Unnormalized joint log scores `ln N(u_n|mu_k,I) + ln pi_k + ln a_nk`.
/// With `embeddings = None` the Gaussian factor is dropped (label-only model).
pub(crate) fn joint_log_scores(
    annotations: &Annotations,
    embeddings: Option<(&[Vec<f64>], &[Vec<f64>])>,
    class_prior: &[f64],
    confusions: &[ConfusionMatrix],
) -> Result<Vec<f64>> {
    let k = annotations.num_classes();
    if class_prior.len() != k {
        return Err(Error::DimensionMismatch {
            context: "class prior",
            expected: k,
            actual: class_prior.len(),
        });
    }
    let mut scores = log_annotation_likelihood(annotations, confusions)?;
    let ln_prior: Vec<f64> = class_prior.iter().map(|p| p.ln()).collect();
    for (n, row) in scores.chunks_mut(k).enumerate() {
        for (t, s) in row.iter_mut().enumerate() {
            *s += ln_prior[t];
        }
        if let Some((emb, protos)) = embeddings {
            if protos.len() != k {
                return Err(Error::DimensionMismatch {
                    context: "prototype count",
                    expected: k,
                    actual: protos.len(),
                });
            }
            for (t, s) in row.iter_mut().enumerate() {
                if protos[t].len() != emb[n].len() {
                    return Err(Error::DimensionMismatch {
                        context: "prototype dimension",
                        expected: emb[n].len(),
                        actual: protos[t].len(),
                    });
                }
                *s += ln_unit_gaussian(&emb[n], &protos[t]);
            }
        }
    }
    Ok(scores)
}

pub(crate) fn normalize_scores(k: usize, mut scores: Vec<f64>) -> Result<Responsibilities> {
    for (n, row) in scores.chunks_mut(k).enumerate() {
        if row.iter().all(|s| *s == f64::NEG_INFINITY) {
            return Err(Error::Numerical(format!(
                "example {n} has zero probability under every class"
            )));
        }
        if row.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite("E-step scores"));
        }
        softmax_in_place(row);
    }
    Ok(Responsibilities::from_flat(k, scores))
}

/// Closed-form E step: `lambda_nk ∝ N(u_n | mu_k, I) pi_k a_nk`, normalized in log space.
pub fn e_step(support: &SupportSet, params: &TaskParams) -> Result<Responsibilities> {
    let scores = joint_log_scores(
        &support.annotations,
        Some((&support.embeddings, &params.prototypes)),
        &params.class_prior,
        &params.confusions,
    )?;
    normalize_scores(support.num_classes(), scores)
}
