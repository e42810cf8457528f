//! The episodic outer loop: sample, pseudo-annotate, adapt, score, update.

use std::time::Instant;

use log::{debug, info};
use sha2::{Digest, Sha256};

use super::adam::{adam_update, AdamSettings, TrainState};
use super::eval::{evaluate_method, EvalSettings, Method};
use super::loss::query_loss_grad;
use super::unrolled::UnrolledEm;
use crate::annotators::{clean_annotations, pseudo_annotate, AnnotatorDistribution, PseudoAnnotation};
use crate::data::{sample_episode, Episode, EpisodeShape, LabeledDataset};
use crate::em::{Annotations, PriorHyperparams, SupportSet};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{invalid, Error, Result};
use crate::rng::{child_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    /// Support labels come from pseudo-annotators.
    None,
    /// Support labels are the clean source labels.
    NoPseudoAnnotation,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoPseudoAnnotation => "no-pseudo-annotation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaConfig {
    pub encoder: EncoderConfig,
    pub ways: usize,
    pub shots: usize,
    pub query_per_class: usize,
    pub annotators: usize,
    pub pseudo_dist: AnnotatorDistribution,
    /// Target annotators simulated on validation tasks.
    pub val_dist: AnnotatorDistribution,
    /// Classifier built on validation tasks.
    pub val_method: Method,
    pub hyper: PriorHyperparams,
    pub adam: AdamSettings,
    pub max_iterations: usize,
    pub validation_interval: usize,
    /// Validations without improvement before stopping.
    pub patience: usize,
    pub meta_batch: usize,
    pub seed: u64,
    pub ablation: Ablation,
}

impl MetaConfig {
    pub fn new(encoder: EncoderConfig, seed: u64) -> Self {
        Self {
            encoder,
            ways: 5,
            shots: 5,
            query_per_class: 5,
            annotators: 5,
            pseudo_dist: AnnotatorDistribution::meta_training_default(),
            val_dist: AnnotatorDistribution::meta_training_default(),
            val_method: Method::Ours,
            hyper: PriorHyperparams::default(),
            adam: AdamSettings::default(),
            max_iterations: 1000,
            validation_interval: 100,
            patience: 5,
            meta_batch: 1,
            seed,
            ablation: Ablation::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ways", self.ways),
            ("shots", self.shots),
            ("query_per_class", self.query_per_class),
            ("annotators", self.annotators),
            ("validation_interval", self.validation_interval),
            ("patience", self.patience),
            ("meta_batch", self.meta_batch),
        ] {
            if v == 0 {
                return Err(invalid(name, "must be >= 1"));
            }
        }
        self.adam.validate()
    }

    pub fn shape(&self) -> EpisodeShape {
        EpisodeShape::new(self.ways, self.shots, self.query_per_class)
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            annotators: self.annotators,
            dist: self.val_dist.clone(),
            hyper: self.hyper,
            seed: child_seed(self.seed, "val"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeGradient {
    pub loss: f64,
    pub gradient: Vec<f64>,
}

/// Loss and parameter gradient for one episode with fixed support annotations.
pub fn episode_gradient(
    encoder: &EncoderParams,
    support_x: &[Vec<f64>],
    annotations: &Annotations,
    query_x: &[Vec<f64>],
    query_labels: &[usize],
    hyper: &PriorHyperparams,
) -> Result<EpisodeGradient> {
    if query_x.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let n_s = support_x.len();
    let batch: Vec<Vec<f64>> = support_x.iter().chain(query_x).cloned().collect();
    let (mut out, trace) = encoder.forward_batch(&batch)?;
    let queries = out.split_off(n_s);
    let support = SupportSet::new(out, annotations.clone())?;
    let run = UnrolledEm::forward(&support, hyper)?;
    let fin = run.final_params();
    let lg = query_loss_grad(&fin.prototypes, &fin.class_prior, &queries, query_labels)?;
    let mut grads = run.backward(&support, &lg.d_prototypes, &lg.d_class_prior)?;
    grads.extend(lg.d_queries);
    Ok(EpisodeGradient {
        loss: lg.loss,
        gradient: encoder.backward(&trace, &grads)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaStep {
    pub loss: f64,
    pub gradient: Vec<f64>,
    /// The pseudo-annotators drawn for this episode, if any.
    pub pseudo: Option<PseudoAnnotation>,
}

/// Pseudo-annotates the clean support of `episode` (unless ablated) and
/// differentiates the query loss.
pub fn meta_gradient<R: rand::Rng + ?Sized>(
    encoder: &EncoderParams,
    episode: &Episode,
    config: &MetaConfig,
    rng: &mut R,
) -> Result<MetaStep> {
    let k = episode.ways();
    let (annotations, pseudo) = match config.ablation {
        Ablation::None => {
            let p = pseudo_annotate(&episode.support_labels, config.annotators, &config.pseudo_dist, k, rng)?;
            (p.annotations.clone(), Some(p))
        }
        Ablation::NoPseudoAnnotation => {
            (clean_annotations(&episode.support_labels, config.annotators, k)?, None)
        }
    };
    let eg = episode_gradient(
        encoder,
        &episode.support_x,
        &annotations,
        &episode.query_x,
        &episode.query_labels,
        &config.hyper,
    )?;
    Ok(MetaStep {
        loss: eg.loss,
        gradient: eg.gradient,
        pseudo,
    })
}

/// Digest of the confusion matrices drawn for one iteration.
pub fn pseudo_hash(pseudo: &[&PseudoAnnotation]) -> u64 {
    let mut h = Sha256::new();
    for p in pseudo {
        for c in &p.confusions {
            for e in c.entries() {
                h.update(e.to_le_bytes());
            }
        }
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: f64,
    pub wall_ms: f64,
    /// Zero when pseudo-annotation is ablated.
    pub pseudo_hash: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    /// Outer iterations completed when the snapshot was scored.
    pub iteration: usize,
    pub mean_accuracy: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best: EncoderParams,
    pub best_score: f64,
    pub best_iteration: usize,
    pub log: Vec<LogRow>,
    pub validations: Vec<Validation>,
    pub stopped_early: bool,
    pub ablation: Ablation,
}

/// Runs the outer loop from the encoder's deterministic initialization. The
/// untrained encoder is scored first, so the returned parameters are never
/// worse on `val_tasks` than the initialization.
pub fn meta_train(source: &LabeledDataset, val_tasks: &[Episode], config: &MetaConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if source.dim() != config.encoder.input_dim {
        return Err(Error::DimensionMismatch {
            context: "source features",
            expected: config.encoder.input_dim,
            actual: source.dim(),
        });
    }
    let shape = config.shape();
    let settings = config.eval_settings();
    let mut encoder = EncoderParams::init(&config.encoder)?;
    let mut state = TrainState::new(encoder.flatten());
    let mut log = Vec::with_capacity(config.max_iterations);
    let mut validations = Vec::new();
    let mut stale = 0usize;
    let mut stopped_early = false;

    let mut validate = |encoder: &EncoderParams, state: &mut TrainState, iteration: usize| -> Result<bool> {
        if val_tasks.is_empty() {
            return Ok(true);
        }
        let report = evaluate_method(config.val_method, encoder, val_tasks, &settings)?;
        validations.push(Validation {
            iteration,
            mean_accuracy: report.mean_accuracy,
            stderr: report.stderr,
        });
        info!(
            "validation at {iteration}: {:.4} +- {:.4}",
            report.mean_accuracy, report.stderr
        );
        Ok(state.record_validation(report.mean_accuracy, iteration))
    };
    validate(&encoder, &mut state, 0)?;

    for it in 0..config.max_iterations {
        let started = Instant::now();
        let mut grad = vec![0.0; state.params.len()];
        let mut loss = 0.0;
        let mut drawn = Vec::with_capacity(config.meta_batch);
        for b in 0..config.meta_batch {
            let mut ep_rng = stream(config.seed, &format!("episode/{it}/{b}"));
            let episode = sample_episode(source, &shape, &mut ep_rng)?;
            let mut pa_rng = stream(config.seed, &format!("pseudo/{it}/{b}"));
            let step = meta_gradient(&encoder, &episode, config, &mut pa_rng)?;
            for (g, s) in grad.iter_mut().zip(&step.gradient) {
                *g += s;
            }
            loss += step.loss;
            drawn.extend(step.pseudo);
        }
        let scale = 1.0 / config.meta_batch as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        loss *= scale;
        adam_update(&mut state, &grad, &config.adam)?;
        encoder.set_flat(&state.params)?;
        let hash = if drawn.is_empty() {
            0
        } else {
            pseudo_hash(&drawn.iter().collect::<Vec<_>>())
        };
        log.push(LogRow {
            iteration: it,
            loss,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            pseudo_hash: hash,
        });
        debug!("iteration {it}: loss {loss:.6}");

        let done = it + 1;
        if done % config.validation_interval == 0 {
            if validate(&encoder, &mut state, done)? {
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    info!("early stop after {done} iterations");
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (best_params, best_score, best_iteration) = match state.best.take() {
        Some(s) => (s.params, s.score, s.iteration),
        None => (state.params.clone(), f64::NAN, log.len()),
    };
    Ok(TrainOutcome {
        best: EncoderParams::unflatten(&config.encoder, &best_params)?,
        best_score,
        best_iteration,
        log,
        validations,
        stopped_early,
        ablation: config.ablation,
    })
}
