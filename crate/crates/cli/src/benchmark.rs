//! Seeded synthetic comparison of the meta-learner against its ablation and
//! the prototype baselines on noisy target annotators.

use crowdmeta::annotators::AnnotatorDistribution;
use crowdmeta::data::{generate_synthetic, sample_episode, split_classes, Episode, EpisodeShape, LabeledDataset, SyntheticSpec};
use crowdmeta::em::PriorHyperparams;
use crowdmeta::encoder::{EncoderConfig, EncoderParams};
use crowdmeta::meta::{evaluate_method, meta_train, select_b, Ablation, EvalReport, EvalSettings, MetaConfig, Method};
use crowdmeta::rng::{child_seed, stream};
use crowdmeta::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSettings {
    pub dim: usize,
    pub train_classes: usize,
    pub val_classes: usize,
    pub test_classes: usize,
    pub examples_per_class: usize,
    pub spread: f64,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub ways: usize,
    pub shots: Vec<usize>,
    pub query_per_class: usize,
    pub annotators: usize,
    pub target_dist: AnnotatorDistribution,
    pub pseudo_dist: AnnotatorDistribution,
    pub hyper: PriorHyperparams,
    pub learning_rate: f64,
    pub iterations: usize,
    pub validation_interval: usize,
    pub patience: usize,
    pub meta_batch: usize,
    pub val_tasks: usize,
    pub test_tasks: usize,
    /// Class-prior exponents tried on the validation tasks after training.
    pub b_candidates: Vec<f64>,
    pub seed: u64,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            dim: 8,
            train_classes: 50,
            val_classes: 20,
            test_classes: 30,
            examples_per_class: 40,
            spread: 0.6,
            hidden_dims: vec![32],
            embed_dim: 8,
            ways: 4,
            shots: vec![1, 3],
            query_per_class: 10,
            annotators: 5,
            target_dist: AnnotatorDistribution::ehs(0.1, 0.6, 0.3).expect("valid weights"),
            pseudo_dist: AnnotatorDistribution::meta_training_default(),
            hyper: PriorHyperparams::default(),
            learning_rate: 1e-3,
            iterations: 2500,
            validation_interval: 250,
            patience: 4,
            meta_batch: 8,
            val_tasks: 50,
            test_tasks: 50,
            b_candidates: vec![1.0, 10.0, 100.0],
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShotResult {
    pub shots: usize,
    /// Selected class-prior exponent for ours, w/o-PA, proto-MV and proto-DS.
    pub selected_b: [f64; 4],
    pub ours: EvalReport,
    pub without_pseudo: EvalReport,
    pub proto_mv: EvalReport,
    pub proto_ds: EvalReport,
}

pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn make_splits(s: &BenchmarkSettings) -> Result<Splits> {
    let total = s.train_classes + s.val_classes + s.test_classes;
    let ds = generate_synthetic(&SyntheticSpec {
        num_classes: total,
        dim: s.dim,
        spread: s.spread,
        examples_per_class: s.examples_per_class,
        seed: child_seed(s.seed, "data"),
    })?;
    let f = |n: usize| n as f64 / total as f64;
    let (train, val, test) = split_classes(
        &ds,
        (f(s.train_classes), f(s.val_classes), f(s.test_classes)),
        child_seed(s.seed, "split"),
    )?;
    Ok(Splits { train, val, test })
}

pub fn sample_tasks(ds: &LabeledDataset, shape: &EpisodeShape, n: usize, seed: u64, label: &str) -> Result<Vec<Episode>> {
    let mut rng = stream(seed, label);
    (0..n).map(|_| sample_episode(ds, shape, &mut rng)).collect()
}

fn train(
    s: &BenchmarkSettings,
    train_ds: &LabeledDataset,
    val: &[Episode],
    shots: usize,
    variant: Method,
    ablation: Ablation,
) -> Result<EncoderParams> {
    let enc = EncoderConfig::new(s.dim, s.hidden_dims.clone(), s.embed_dim, child_seed(s.seed, "init"))?;
    let mut c = MetaConfig::new(enc, child_seed(s.seed, &format!("train/{shots}/{}/{}", variant.name(), ablation.name())));
    c.ways = s.ways;
    c.shots = shots;
    c.query_per_class = s.query_per_class;
    c.annotators = s.annotators;
    c.pseudo_dist = s.pseudo_dist.clone();
    c.val_dist = s.pseudo_dist.clone();
    c.hyper = s.hyper;
    c.adam.learning_rate = s.learning_rate;
    c.max_iterations = s.iterations;
    c.validation_interval = s.validation_interval;
    c.patience = s.patience;
    c.meta_batch = s.meta_batch;
    c.ablation = ablation;
    if variant != Method::Ours {
        // prototypical network: class means of clean labels, uniform prior
        c.annotators = 1;
        c.val_method = Method::ProtoMv;
        c.hyper = PriorHyperparams::with_zero_tau(s.hyper.b, s.hyper.c, 1)?;
    }
    Ok(meta_train(train_ds, val, &c)?.best)
}

/// Trains the three encoders for every shot count and scores them on the
/// same target tasks and annotations.
pub fn run(s: &BenchmarkSettings) -> Result<Vec<ShotResult>> {
    let splits = make_splits(s)?;
    let mut out = Vec::with_capacity(s.shots.len());
    for &shots in &s.shots {
        let shape = EpisodeShape::new(s.ways, shots, s.query_per_class);
        let val = sample_tasks(&splits.val, &shape, s.val_tasks, s.seed, &format!("val/{shots}"))?;
        let test = sample_tasks(&splits.test, &shape, s.test_tasks, s.seed, &format!("test/{shots}"))?;
        let ours = train(s, &splits.train, &val, shots, Method::Ours, Ablation::None)?;
        let wo = train(s, &splits.train, &val, shots, Method::Ours, Ablation::NoPseudoAnnotation)?;
        let proto = train(s, &splits.train, &val, shots, Method::ProtoMv, Ablation::NoPseudoAnnotation)?;
        let val_settings = EvalSettings {
            annotators: s.annotators,
            dist: s.pseudo_dist.clone(),
            hyper: s.hyper,
            seed: child_seed(s.seed, &format!("select/{shots}")),
        };
        let target = EvalSettings {
            annotators: s.annotators,
            dist: s.target_dist.clone(),
            hyper: s.hyper,
            seed: child_seed(s.seed, &format!("target/{shots}")),
        };
        let mut selected_b = [s.hyper.b; 4];
        let mut score = |slot: usize, method: Method, enc: &EncoderParams| -> Result<EvalReport> {
            if !s.b_candidates.is_empty() {
                selected_b[slot] = select_b(method, enc, &val, &val_settings, &s.b_candidates)?.0;
            }
            let settings = EvalSettings {
                hyper: s.hyper.with_b(selected_b[slot]),
                ..target.clone()
            };
            evaluate_method(method, enc, &test, &settings)
        };
        let ours_report = score(0, Method::Ours, &ours)?;
        let wo_report = score(1, Method::Ours, &wo)?;
        let mv_report = score(2, Method::ProtoMv, &proto)?;
        let ds_report = score(3, Method::ProtoDs, &proto)?;
        out.push(ShotResult {
            shots,
            selected_b,
            ours: ours_report,
            without_pseudo: wo_report,
            proto_mv: mv_report,
            proto_ds: ds_report,
        });
    }
    Ok(out)
}
