//! Target-task evaluation with simulated annotators.
//!
//! Every task draws its annotators from its own seeded stream, so methods
//! evaluated with the same settings see identical noisy support labels.

use rayon::prelude::*;

use crate::annotators::{annotate, sample_annotators, AnnotatorDistribution};
use crate::baselines::{dawid_skene, label_accuracy, majority_vote, one_hot, prototype_from_labels};
use crate::data::Episode;
use crate::em::{adapt, predict_label, AdaptedClassifier, Annotations, PriorHyperparams, SupportSet};
use crate::encoder::EncoderParams;
use crate::error::{invalid, Result};
use crate::math::argmax;
use crate::rng::stream;

/// How a task-specific classifier is built from noisy support labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// EM over the joint embedding and annotator model.
    Ours,
    /// Class means of majority-vote labels.
    ProtoMv,
    /// Prototypes weighted by Dawid-Skene soft labels.
    ProtoDs,
    /// Class means of hard Dawid-Skene labels.
    Ds,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ours, Method::ProtoMv, Method::ProtoDs, Method::Ds];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::ProtoMv => "proto-mv",
            Method::ProtoDs => "proto-ds",
            Method::Ds => "ds",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub annotators: usize,
    pub dist: AnnotatorDistribution,
    pub hyper: PriorHyperparams,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskOutcome {
    /// Fraction of query points classified correctly.
    pub accuracy: f64,
    /// Fraction of support points whose inferred label equals the truth.
    pub label_recovery: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tasks: Vec<TaskOutcome>,
    pub mean_accuracy: f64,
    pub stderr: f64,
    pub mean_label_recovery: f64,
}

impl EvalReport {
    pub fn from_tasks(tasks: Vec<TaskOutcome>) -> Self {
        let acc: Vec<f64> = tasks.iter().map(|t| t.accuracy).collect();
        let (mean_accuracy, stderr) = mean_and_stderr(&acc);
        let rec: Vec<f64> = tasks.iter().map(|t| t.label_recovery).collect();
        Self {
            tasks,
            mean_accuracy,
            stderr,
            mean_label_recovery: mean_and_stderr(&rec).0,
        }
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.tasks.iter().map(|t| t.accuracy).collect()
    }
}

/// Mean and `s / sqrt(n)` with the `n - 1` sample standard deviation. The
/// standard error is zero for fewer than two values.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Simulated target annotations for task `index`.
pub fn task_annotations(episode: &Episode, index: usize, settings: &EvalSettings) -> Result<Annotations> {
    let mut rng = stream(settings.seed, &format!("eval/task/{index}"));
    let (_, confusions) =
        sample_annotators(settings.annotators, &settings.dist, episode.ways(), &mut rng)?;
    annotate(&episode.support_labels, &confusions, &mut rng)
}

fn build_classifier(
    method: Method,
    embeddings: Vec<Vec<f64>>,
    annotations: Annotations,
    hyper: &PriorHyperparams,
) -> Result<(AdaptedClassifier, Vec<usize>)> {
    match method {
        Method::Ours => {
            let support = SupportSet::new(embeddings, annotations)?;
            let c = adapt(&support, hyper)?;
            let labels = c.responsibilities.rows().map(argmax).collect();
            Ok((c, labels))
        }
        Method::ProtoMv => {
            let mv = majority_vote(&annotations)?;
            let w = one_hot(&mv.labels, annotations.num_classes());
            let p = prototype_from_labels(&embeddings, &w, 0.0, hyper.b)?;
            Ok((p.classifier, mv.labels))
        }
        Method::ProtoDs => {
            let ds = dawid_skene(&annotations, hyper)?;
            let labels = ds.hard_labels();
            let p = prototype_from_labels(&embeddings, &ds.soft_labels, 0.0, hyper.b)?;
            Ok((p.classifier, labels))
        }
        Method::Ds => {
            let labels = dawid_skene(&annotations, hyper)?.hard_labels();
            let w = one_hot(&labels, annotations.num_classes());
            let p = prototype_from_labels(&embeddings, &w, 0.0, hyper.b)?;
            Ok((p.classifier, labels))
        }
    }
}

/// Adapts to one task with the given annotations and scores the query set.
pub fn evaluate_task(
    method: Method,
    encoder: &EncoderParams,
    episode: &Episode,
    annotations: Annotations,
    hyper: &PriorHyperparams,
) -> Result<TaskOutcome> {
    let support = encoder.embed(&episode.support_x)?;
    let queries = encoder.embed(&episode.query_x)?;
    let (classifier, inferred) = build_classifier(method, support, annotations, hyper)?;
    let mut correct = 0usize;
    for (v, &t) in queries.iter().zip(&episode.query_labels) {
        if predict_label(v, &classifier)? == t {
            correct += 1;
        }
    }
    Ok(TaskOutcome {
        accuracy: correct as f64 / queries.len().max(1) as f64,
        label_recovery: label_accuracy(&inferred, &episode.support_labels),
    })
}

pub fn evaluate_method(
    method: Method,
    encoder: &EncoderParams,
    tasks: &[Episode],
    settings: &EvalSettings,
) -> Result<EvalReport> {
    let outcomes = tasks
        .par_iter()
        .enumerate()
        .map(|(i, ep)| {
            let ann = task_annotations(ep, i, settings)?;
            evaluate_task(method, encoder, ep, ann, &settings.hyper)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_tasks(outcomes))
}

pub fn evaluate(encoder: &EncoderParams, tasks: &[Episode], settings: &EvalSettings) -> Result<EvalReport> {
    evaluate_method(Method::Ours, encoder, tasks, settings)
}

/// Picks the class-prior exponent with the best mean validation accuracy.
/// Ties go to the earlier candidate.
pub fn select_b(
    method: Method,
    encoder: &EncoderParams,
    val_tasks: &[Episode],
    settings: &EvalSettings,
    candidates: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(invalid("b", "no candidates"));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for &b in candidates {
        let s = EvalSettings {
            hyper: settings.hyper.with_b(b),
            ..settings.clone()
        };
        scores.push(evaluate_method(method, encoder, val_tasks, &s)?.mean_accuracy);
    }
    Ok((candidates[argmax(&scores)], scores))
}
