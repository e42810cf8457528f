//! Simulated annotators: profiles, their confusion matrices, and noisy labels.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::em::{Annotations, ConfusionMatrix};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnnotatorKind {
    Expert,
    Hammer,
    Spammer,
    PairwiseFlipper,
    ClasswiseSpammer,
}

impl AnnotatorKind {
    pub const ALL: [AnnotatorKind; 5] = [
        AnnotatorKind::Expert,
        AnnotatorKind::Hammer,
        AnnotatorKind::Spammer,
        AnnotatorKind::PairwiseFlipper,
        AnnotatorKind::ClasswiseSpammer,
    ];

    /// Half-open accuracy range `(lo, hi]`, for kinds that draw `q`.
    pub fn accuracy_range(self) -> Option<(f64, f64)> {
        match self {
            AnnotatorKind::Expert => Some((0.8, 1.0)),
            AnnotatorKind::Hammer | AnnotatorKind::PairwiseFlipper => Some((0.5, 0.8)),
            AnnotatorKind::Spammer | AnnotatorKind::ClasswiseSpammer => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub kind: AnnotatorKind,
    /// Probability of reporting the true class. `1/K` for spammers and `1`
    /// for class-wise spammers (on their expert classes).
    pub q: f64,
    /// Classes answered uniformly at random (class-wise spammers only).
    pub spam_classes: Vec<usize>,
    /// Label reported instead of class `k` on an error (pair-wise flippers only).
    pub flip_targets: Vec<usize>,
}

impl AnnotatorProfile {
    pub fn expert(q: f64) -> Self {
        Self::simple(AnnotatorKind::Expert, q)
    }

    pub fn hammer(q: f64) -> Self {
        Self::simple(AnnotatorKind::Hammer, q)
    }

    pub fn spammer(k: usize) -> Self {
        Self::simple(AnnotatorKind::Spammer, 1.0 / k as f64)
    }

    fn simple(kind: AnnotatorKind, q: f64) -> Self {
        Self {
            kind,
            q,
            spam_classes: vec![],
            flip_targets: vec![],
        }
    }
}

/// Mixture weights over annotator kinds, indexed like [`AnnotatorKind::ALL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorDistribution {
    weights: [f64; 5],
}

impl AnnotatorDistribution {
    pub fn new(weights: [f64; 5]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("annotator distribution", "weights must be >= 0"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(
                "annotator distribution",
                format!("weights must sum to 1, got {total}"),
            ));
        }
        // renormalize so the stored weights sum to one at full precision
        let mut w = weights;
        for x in w.iter_mut() {
            *x /= total;
        }
        Ok(Self { weights: w })
    }

    /// Distribution over (expert, hammer, spammer).
    pub fn ehs(expert: f64, hammer: f64, spammer: f64) -> Result<Self> {
        Self::new([expert, hammer, spammer, 0.0, 0.0])
    }

    /// Distribution over (hammer, pair-wise flipper, class-wise spammer).
    pub fn hpc(hammer: f64, flipper: f64, classwise: f64) -> Result<Self> {
        Self::new([0.0, hammer, 0.0, flipper, classwise])
    }

    /// Expert/hammer/spammer mix with a given spammer share and expert share 0.1.
    pub fn with_spammer_ratio(spammer: f64) -> Result<Self> {
        Self::ehs(0.1, 0.9 - spammer, spammer)
    }

    /// The pseudo-annotator distribution used for meta-training.
    pub fn meta_training_default() -> Self {
        Self::ehs(0.1, 0.7, 0.2).expect("valid constant")
    }

    pub fn weights(&self) -> &[f64; 5] {
        &self.weights
    }

    pub fn weight(&self, kind: AnnotatorKind) -> f64 {
        let i = AnnotatorKind::ALL.iter().position(|k| *k == kind).unwrap();
        self.weights[i]
    }

    fn sample_kind<R: Rng + ?Sized>(&self, rng: &mut R) -> AnnotatorKind {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = AnnotatorKind::Expert;
        for (kind, w) in AnnotatorKind::ALL.iter().zip(self.weights) {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            last = *kind;
            if u < acc {
                return *kind;
            }
        }
        last
    }
}

/// Uniform draw on `(lo, hi]`.
fn uniform_half_open<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    hi - u * (hi - lo)
}

/// Draws one annotator profile.
pub fn sample_profile<R: Rng + ?Sized>(
    dist: &AnnotatorDistribution,
    k: usize,
    rng: &mut R,
) -> Result<AnnotatorProfile> {
    if k < 2 {
        return Err(invalid("K", "annotator simulation needs at least 2 classes"));
    }
    let kind = dist.sample_kind(rng);
    Ok(match kind {
        AnnotatorKind::Expert | AnnotatorKind::Hammer => {
            let (lo, hi) = kind.accuracy_range().unwrap();
            AnnotatorProfile::simple(kind, uniform_half_open(rng, lo, hi))
        }
        AnnotatorKind::Spammer => AnnotatorProfile::spammer(k),
        AnnotatorKind::PairwiseFlipper => {
            let (lo, hi) = kind.accuracy_range().unwrap();
            let q = uniform_half_open(rng, lo, hi);
            let flip_targets = (0..k)
                .map(|t| {
                    let other = rng.random_range(0..k - 1);
                    if other >= t {
                        other + 1
                    } else {
                        other
                    }
                })
                .collect();
            AnnotatorProfile {
                kind,
                q,
                spam_classes: vec![],
                flip_targets,
            }
        }
        AnnotatorKind::ClasswiseSpammer => {
            let mut spam_classes = sample(rng, k, k / 2).into_vec();
            spam_classes.sort_unstable();
            AnnotatorProfile {
                kind,
                q: 1.0,
                spam_classes,
                flip_targets: vec![],
            }
        }
    })
}

/// The confusion matrix implied by a profile.
pub fn profile_to_confusion(profile: &AnnotatorProfile, k: usize) -> ConfusionMatrix {
    let kf = k as f64;
    let mut entries = vec![0.0; k * k];
    let mut set = |l: usize, t: usize, v: f64| entries[l * k + t] = v;
    match profile.kind {
        AnnotatorKind::Expert | AnnotatorKind::Hammer => {
            let off = (1.0 - profile.q) / (kf - 1.0);
            for t in 0..k {
                for l in 0..k {
                    set(l, t, if l == t { profile.q } else { off });
                }
            }
        }
        AnnotatorKind::Spammer => return ConfusionMatrix::uniform(k),
        AnnotatorKind::PairwiseFlipper => {
            for t in 0..k {
                set(t, t, profile.q);
                set(profile.flip_targets[t], t, 1.0 - profile.q);
            }
        }
        AnnotatorKind::ClasswiseSpammer => {
            for t in 0..k {
                if profile.spam_classes.contains(&t) {
                    for l in 0..k {
                        set(l, t, 1.0 / kf);
                    }
                } else {
                    set(t, t, 1.0);
                }
            }
        }
    }
    ConfusionMatrix::from_entries_unchecked(k, entries)
}

fn sample_label<R: Rng + ?Sized>(matrix: &ConfusionMatrix, class: usize, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let k = matrix.num_classes();
    let mut acc = 0.0;
    for l in 0..k {
        acc += matrix.get(l, class);
        if u < acc {
            return l;
        }
    }
    // rounding slack: the last label with positive mass
    (0..k).rev().find(|&l| matrix.get(l, class) > 0.0).unwrap_or(k - 1)
}

/// Every annotator labels every example by sampling from column `t_n` of its matrix.
pub fn annotate<R: Rng + ?Sized>(
    true_labels: &[usize],
    confusions: &[ConfusionMatrix],
    rng: &mut R,
) -> Result<Annotations> {
    annotate_sparse(true_labels, confusions, 1.0, rng)
}

/// Like [`annotate`], but each (example, annotator) pair is kept with
/// probability `coverage`; every example keeps at least one label.
pub fn annotate_sparse<R: Rng + ?Sized>(
    true_labels: &[usize],
    confusions: &[ConfusionMatrix],
    coverage: f64,
    rng: &mut R,
) -> Result<Annotations> {
    let k = confusions
        .first()
        .map(ConfusionMatrix::num_classes)
        .ok_or_else(|| invalid("annotators", "need at least one annotator"))?;
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(invalid("coverage", "must lie in (0, 1]"));
    }
    let per_example = true_labels
        .iter()
        .map(|&t| {
            if t >= k {
                return Err(invalid("true label", format!("{t} out of range for K={k}")));
            }
            let mut labels: Vec<(usize, usize)> = confusions
                .iter()
                .enumerate()
                .map(|(r, m)| (r, sample_label(m, t, rng)))
                .collect();
            if coverage < 1.0 {
                let keep: Vec<bool> = labels.iter().map(|_| rng.random::<f64>() < coverage).collect();
                if !keep.iter().any(|x| *x) {
                    let forced = rng.random_range(0..labels.len());
                    labels = vec![labels[forced]];
                } else {
                    labels = labels
                        .into_iter()
                        .zip(keep)
                        .filter_map(|(p, k)| k.then_some(p))
                        .collect();
                }
            }
            Ok(labels)
        })
        .collect::<Result<Vec<_>>>()?;
    Annotations::new(k, confusions.len(), per_example)
}

/// Result of drawing pseudo-annotators for one meta-training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoAnnotation {
    pub annotations: Annotations,
    pub profiles: Vec<AnnotatorProfile>,
    pub confusions: Vec<ConfusionMatrix>,
}

pub fn sample_annotators<R: Rng + ?Sized>(
    r: usize,
    dist: &AnnotatorDistribution,
    k: usize,
    rng: &mut R,
) -> Result<(Vec<AnnotatorProfile>, Vec<ConfusionMatrix>)> {
    let profiles = (0..r)
        .map(|_| sample_profile(dist, k, rng))
        .collect::<Result<Vec<_>>>()?;
    let confusions = profiles.iter().map(|p| profile_to_confusion(p, k)).collect();
    Ok((profiles, confusions))
}

/// Draws `r` fresh annotators from `dist` and labels the clean support set.
pub fn pseudo_annotate<R: Rng + ?Sized>(
    support_truth: &[usize],
    r: usize,
    dist: &AnnotatorDistribution,
    k: usize,
    rng: &mut R,
) -> Result<PseudoAnnotation> {
    if r == 0 {
        return Err(invalid("R", "need at least one annotator"));
    }
    let (profiles, confusions) = sample_annotators(r, dist, k, rng)?;
    let annotations = annotate(support_truth, &confusions, rng)?;
    Ok(PseudoAnnotation {
        annotations,
        profiles,
        confusions,
    })
}

/// `r` noiseless annotators that all report the true label.
pub fn clean_annotations(support_truth: &[usize], r: usize, k: usize) -> Result<Annotations> {
    let labels: Vec<Vec<usize>> = support_truth.iter().map(|&t| vec![t; r.max(1)]).collect();
    Annotations::dense(k, &labels)
}
