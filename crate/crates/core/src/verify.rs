//! Independent oracles and the verification suites built on them.
//!
//! The oracles deliberately avoid the log-space helpers used by the EM code:
//! they compute in linear space, enumerate joint label assignments, or take
//! finite differences. Each suite uses fixed seeds and reports its worst case.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::annotators::{sample_annotators, annotate, AnnotatorDistribution};
use crate::baselines::dawid_skene;
use crate::em::{
    adapt, e_step, init_responsibilities, log_posterior, lower_bound_q, m_step, predict_label,
    Annotations, ConfusionMatrix, PriorHyperparams, Responsibilities, SupportSet, TaskParams,
};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::Result;
use crate::meta::episode_gradient;
use crate::rng::stream;

/// Outcome of one measured property.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub worst: f64,
    pub threshold: f64,
    /// `true` when `worst` must stay at or above `threshold`.
    pub lower_bound: bool,
    pub cases: usize,
}

impl Check {
    pub fn passed(&self) -> bool {
        if self.lower_bound {
            self.worst >= self.threshold
        } else {
            self.worst < self.threshold
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = if self.lower_bound { ">=" } else { "<" };
        write!(
            f,
            "{} {}: worst {:.3e} (threshold {op} {:.1e}, {} cases)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.threshold,
            self.cases
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "suite {}: {}", self.suite, if self.passed() { "PASS" } else { "FAIL" })?;
        for c in &self.checks {
            writeln!(f, "  {c}")?;
        }
        Ok(())
    }
}

pub const SUITES: [&str; 5] = ["em-monotone", "estep-oracle", "lower-bound", "gradcheck", "proto-equiv"];

pub fn run_suite(name: &str, seed: u64) -> Option<Result<SuiteReport>> {
    Some(match name {
        "em-monotone" => em_monotone(seed, 200),
        "estep-oracle" => estep_oracle(seed, 100),
        "lower-bound" => lower_bound(seed, 100),
        "gradcheck" => gradcheck(seed, 20),
        "proto-equiv" => proto_equiv(seed, 1000),
        _ => return None,
    })
}

// ---------------------------------------------------------------- oracles

fn gaussian_density(u: &[f64], mean: &[f64]) -> f64 {
    let d2: f64 = u.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    (-0.5 * d2).exp() / (2.0 * std::f64::consts::PI).powf(u.len() as f64 / 2.0)
}

/// `N(u|mu_k, I) pi_k prod_r alpha^r_{y,k}` for every class, in linear space.
/// Without embeddings the Gaussian factor is dropped.
fn joint_linear(
    support: &Annotations,
    n: usize,
    embedding: Option<(&[f64], &[Vec<f64>])>,
    class_prior: &[f64],
    confusions: &[ConfusionMatrix],
) -> Vec<f64> {
    (0..support.num_classes())
        .map(|k| {
            let mut p = class_prior[k];
            if let Some((u, mu)) = embedding {
                p *= gaussian_density(u, &mu[k]);
            }
            for &(r, y) in support.example(n) {
                p *= confusions[r].get(y, k);
            }
            p
        })
        .collect()
}

/// Responsibilities by direct Bayes rule without logarithms.
pub fn naive_e_step(support: &SupportSet, params: &TaskParams) -> Vec<Vec<f64>> {
    (0..support.len())
        .map(|n| {
            let e = Some((&support.embeddings[n][..], &params.prototypes[..]));
            let p = joint_linear(&support.annotations, n, e, &params.class_prior, &params.confusions);
            let z: f64 = p.iter().sum();
            p.into_iter().map(|x| x / z).collect()
        })
        .collect()
}

/// Log posterior summed from linear-space marginals and explicit prior densities.
pub fn naive_log_posterior(support: &SupportSet, params: &TaskParams, hyper: &PriorHyperparams) -> f64 {
    let k = support.num_classes() as f64;
    let mut total = 0.0;
    for n in 0..support.len() {
        let e = Some((&support.embeddings[n][..], &params.prototypes[..]));
        let p = joint_linear(&support.annotations, n, e, &params.class_prior, &params.confusions);
        total += p.iter().sum::<f64>().ln();
    }
    if hyper.tau > 0.0 {
        for mu in &params.prototypes {
            let m = mu.len() as f64;
            let sq: f64 = mu.iter().map(|x| x * x).sum();
            total += 0.5 * m * (hyper.tau / (2.0 * std::f64::consts::PI)).ln() - 0.5 * hyper.tau * sq;
        }
    }
    let dirichlet = |p: &[f64], e: f64| {
        ln_gamma(k * (e + 1.0)) - k * ln_gamma(e + 1.0) + e * p.iter().map(|x| x.ln()).sum::<f64>()
    };
    total += dirichlet(&params.class_prior, hyper.b);
    for c in &params.confusions {
        for t in 0..support.num_classes() {
            total += dirichlet(&c.column(t), hyper.c);
        }
    }
    total
}

/// Per-example class marginals by summing over every joint assignment of
/// true labels. Feasible only for `K^N` up to a few thousand.
pub fn enumerated_posterior(
    annotations: &Annotations,
    embeddings: Option<(&[Vec<f64>], &[Vec<f64>])>,
    class_prior: &[f64],
    confusions: &[ConfusionMatrix],
) -> Vec<Vec<f64>> {
    let n = annotations.len();
    let k = annotations.num_classes();
    let factors: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let e = embeddings.map(|(u, mu)| (&u[i][..], mu));
            joint_linear(annotations, i, e, class_prior, confusions)
        })
        .collect();
    let mut marg = vec![vec![0.0; k]; n];
    let mut z = 0.0;
    let mut labels = vec![0usize; n];
    loop {
        let w: f64 = labels.iter().enumerate().map(|(i, &t)| factors[i][t]).product();
        z += w;
        for (i, &t) in labels.iter().enumerate() {
            marg[i][t] += w;
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == n {
                for row in &mut marg {
                    row.iter_mut().for_each(|x| *x /= z);
                }
                return marg;
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}

fn max_abs_diff(a: &[Vec<f64>], b: &Responsibilities) -> f64 {
    a.iter()
        .enumerate()
        .flat_map(|(n, row)| row.iter().enumerate().map(move |(k, x)| (x - b.get(n, k)).abs()))
        .fold(0.0, f64::max)
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// A task with blob embeddings and labels from annotators drawn from `dist`.
pub fn random_support<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    n: usize,
    r: usize,
    dim: usize,
    dist: &AnnotatorDistribution,
) -> Result<SupportSet> {
    let centers: Vec<Vec<f64>> = (0..k).map(|_| gaussian_vec(rng, dim, 1.5)).collect();
    let truth: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    let embeddings = truth
        .iter()
        .map(|&t| {
            let noise = gaussian_vec(rng, dim, 1.0);
            centers[t].iter().zip(noise).map(|(c, e)| c + e).collect()
        })
        .collect();
    let (_, confusions) = sample_annotators(r, dist, k, rng)?;
    let annotations = annotate(&truth, &confusions, rng)?;
    SupportSet::new(embeddings, annotations)
}

fn random_params<R: Rng + ?Sized>(rng: &mut R, k: usize, r: usize, dim: usize) -> TaskParams {
    let simplex = |rng: &mut R| {
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let confusions = (0..r)
        .map(|_| {
            let cols: Vec<Vec<f64>> = (0..k).map(|_| simplex(rng)).collect();
            let rows: Vec<Vec<f64>> = (0..k).map(|l| (0..k).map(|t| cols[t][l]).collect()).collect();
            ConfusionMatrix::from_rows(&rows).expect("columns are normalized")
        })
        .collect();
    TaskParams {
        prototypes: (0..k).map(|_| gaussian_vec(rng, dim, 1.5)).collect(),
        class_prior: simplex(rng),
        confusions,
    }
}

// ----------------------------------------------------------------- suites

/// Log posterior along the M-step outputs of `j` EM iterations.
pub fn posterior_trajectory(support: &SupportSet, hyper: &PriorHyperparams) -> Result<Vec<f64>> {
    let mut lambda = init_responsibilities(&support.annotations)?;
    let mut out = Vec::with_capacity(hyper.em_steps);
    for _ in 0..hyper.em_steps {
        let p = m_step(&lambda, support, hyper)?;
        out.push(log_posterior(support, &p, hyper)?);
        lambda = e_step(support, &p)?;
    }
    Ok(out)
}

/// Smallest per-iteration change of the log posterior over random tasks with
/// `K in {2,4}`, `N_S in {4,20}`, `R in {1,3,7}`, `J = 10`.
pub fn em_monotone(seed: u64, tasks: usize) -> Result<SuiteReport> {
    let dist = AnnotatorDistribution::meta_training_default();
    let hyper = PriorHyperparams::new(1.0, 1.0, 1.0, 10)?;
    let mut worst = f64::INFINITY;
    let mut steps = 0;
    for i in 0..tasks {
        let mut rng = stream(seed, &format!("em-monotone/{i}"));
        let k = [2, 4][i % 2];
        let n = [4, 20][(i / 2) % 2];
        let r = [1, 3, 7][(i / 4) % 3];
        let support = random_support(&mut rng, k, n, r, 3, &dist)?;
        let traj = posterior_trajectory(&support, &hyper)?;
        for w in traj.windows(2) {
            worst = worst.min(w[1] - w[0]);
            steps += 1;
        }
    }
    Ok(SuiteReport {
        suite: "em-monotone",
        checks: vec![Check {
            name: "min per-step log-posterior delta".into(),
            worst,
            threshold: -1e-9,
            lower_bound: true,
            cases: steps,
        }],
    })
}

/// Log-space E step and log posterior against linear-space oracles, plus
/// adapted responsibilities against joint enumeration on tiny tasks.
pub fn estep_oracle(seed: u64, tasks: usize) -> Result<SuiteReport> {
    let dist = AnnotatorDistribution::meta_training_default();
    let hyper = PriorHyperparams::new(1.0, 1.0, 1.0, 3)?;
    let (mut e_worst, mut lp_worst, mut enum_worst, mut ds_worst) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..tasks {
        let mut rng = stream(seed, &format!("estep-oracle/{i}"));
        let k = rng.random_range(2..=4);
        let n = rng.random_range(1..=8);
        let r = rng.random_range(1..=3);
        let support = random_support(&mut rng, k, n, r, 2, &dist)?;
        let params = random_params(&mut rng, k, r, 2);
        e_worst = e_worst.max(max_abs_diff(&naive_e_step(&support, &params), &e_step(&support, &params)?));
        let lp = log_posterior(&support, &params, &hyper)?;
        let naive = naive_log_posterior(&support, &params, &hyper);
        lp_worst = lp_worst.max((lp - naive).abs() / naive.abs().max(1.0));

        let small = (k as f64).powi(n.min(6) as i32) <= 4096.0;
        let m = n.min(6);
        if small {
            let sub = SupportSet::new(
                support.embeddings[..m].to_vec(),
                Annotations::new(k, r, (0..m).map(|j| support.annotations.example(j).to_vec()).collect())?,
            )?;
            let c = adapt(&sub, &hyper)?;
            let en = enumerated_posterior(
                &sub.annotations,
                Some((&sub.embeddings, &c.prototypes)),
                &c.class_prior,
                &c.confusions,
            );
            enum_worst = enum_worst.max(max_abs_diff(&en, &c.responsibilities));
            let ds = dawid_skene(&sub.annotations, &hyper)?;
            let en = enumerated_posterior(&sub.annotations, None, &ds.class_prior, &ds.confusions);
            ds_worst = ds_worst.max(max_abs_diff(&en, &ds.soft_labels));
        }
    }
    let check = |name: &str, worst| Check {
        name: name.into(),
        worst,
        threshold: 1e-12,
        lower_bound: false,
        cases: tasks,
    };
    Ok(SuiteReport {
        suite: "estep-oracle",
        checks: vec![
            check("E step vs linear-space Bayes, max abs diff", e_worst),
            check("adapted responsibilities vs joint enumeration", enum_worst),
            check("Dawid-Skene labels vs joint enumeration", ds_worst),
            Check {
                name: "log posterior vs linear-space oracle, rel diff".into(),
                worst: lp_worst,
                threshold: 1e-10,
                lower_bound: false,
                cases: tasks,
            },
        ],
    })
}

/// `Q <= log posterior` on arbitrary responsibilities, equality after an E step.
pub fn lower_bound(seed: u64, tasks: usize) -> Result<SuiteReport> {
    let dist = AnnotatorDistribution::meta_training_default();
    let mut gap_min = f64::INFINITY;
    let mut tight = 0.0f64;
    let mut states = 0;
    for i in 0..tasks {
        let mut rng = stream(seed, &format!("lower-bound/{i}"));
        let k = rng.random_range(2..=4);
        let n = rng.random_range(2..=20);
        let r = rng.random_range(1..=5);
        let hyper = PriorHyperparams::new(rng.random_range(0.5..2.0), rng.random_range(0.5..5.0), 1.0, 1)?;
        let support = random_support(&mut rng, k, n, r, 3, &dist)?;
        let params = random_params(&mut rng, k, r, 3);
        let lp = log_posterior(&support, &params, &hyper)?;
        for _ in 0..5 {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
                    let s: f64 = v.iter().sum();
                    v.into_iter().map(|x| x / s).collect()
                })
                .collect();
            let q = lower_bound_q(&Responsibilities::from_rows(&rows)?, &support, &params, &hyper)?;
            gap_min = gap_min.min(lp - q);
            states += 1;
        }
        let exact = e_step(&support, &params)?;
        let q = lower_bound_q(&exact, &support, &params, &hyper)?;
        tight = tight.max((lp - q).abs());
    }
    Ok(SuiteReport {
        suite: "lower-bound",
        checks: vec![
            Check {
                name: "min log posterior - Q over arbitrary responsibilities".into(),
                worst: gap_min,
                threshold: -1e-9,
                lower_bound: true,
                cases: states,
            },
            Check {
                name: "|log posterior - Q| after an E step".into(),
                worst: tight,
                threshold: 1e-9,
                lower_bound: false,
                cases: tasks,
            },
        ],
    })
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Reverse-mode meta-gradient against central differences (step 1e-5) over
/// `coords` random parameters for `J in {1,2,3}`, `K in {2,4}`, `R in {1,3}`
/// and one or two hidden layers.
pub fn gradcheck(seed: u64, coords: usize) -> Result<SuiteReport> {
    let dist = AnnotatorDistribution::meta_training_default();
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut cases = 0;
    let mut case = 0u64;
    for hidden in [vec![10], vec![8, 6]] {
        for j in 1..=3 {
            for k in [2, 4] {
                for r in [1, 3] {
                    case += 1;
                    let mut rng = stream(seed, &format!("gradcheck/{case}"));
                    let cfg = EncoderConfig::new(5, hidden.clone(), 3, seed ^ case)?;
                    let enc = EncoderParams::init(&cfg)?;
                    let hyper = PriorHyperparams::new(1.0, 1.0, 1.0, j)?;
                    let shots = 3;
                    let truth: Vec<usize> = (0..k * shots).map(|i| i % k).collect();
                    let centers: Vec<Vec<f64>> = (0..k).map(|_| gaussian_vec(&mut rng, 5, 1.0)).collect();
                    let draw = |rng: &mut rand_chacha::ChaCha8Rng, t: usize| -> Vec<f64> {
                        centers[t].iter().map(|c| c + 0.7 * gaussian_vec(rng, 1, 1.0)[0]).collect()
                    };
                    let support_x: Vec<Vec<f64>> = truth.iter().map(|&t| draw(&mut rng, t)).collect();
                    let query_labels: Vec<usize> = (0..2 * k).map(|i| i % k).collect();
                    let query_x: Vec<Vec<f64>> = query_labels.iter().map(|&t| draw(&mut rng, t)).collect();
                    let (_, confs) = sample_annotators(r, &dist, k, &mut rng)?;
                    let ann = annotate(&truth, &confs, &mut rng)?;
                    let loss = |e: &EncoderParams| {
                        episode_gradient(e, &support_x, &ann, &query_x, &query_labels, &hyper)
                    };
                    let g = loss(&enc)?.gradient;
                    let flat = enc.flatten();
                    for _ in 0..coords {
                        let i = rng.random_range(0..flat.len());
                        let mut p = flat.clone();
                        p[i] = flat[i] + step;
                        let lp = loss(&EncoderParams::unflatten(&cfg, &p)?)?.loss;
                        p[i] = flat[i] - step;
                        let lm = loss(&EncoderParams::unflatten(&cfg, &p)?)?.loss;
                        let fd = (lp - lm) / (2.0 * step);
                        worst = worst.max(relative_error(g[i], fd, 1e-6));
                        cases += 1;
                    }
                }
            }
        }
    }
    Ok(SuiteReport {
        suite: "gradcheck",
        checks: vec![Check {
            name: "max relative error, reverse mode vs central differences".into(),
            worst,
            threshold: 1e-4,
            lower_bound: false,
            cases,
        }],
    })
}

/// Reductions to simpler models: prototypical network at `tau = 0` with one
/// identity annotator and clean labels, and Dawid-Skene when all embeddings
/// coincide.
pub fn proto_equiv(seed: u64, queries: usize) -> Result<SuiteReport> {
    let per_task = 50;
    let tasks = queries.div_ceil(per_task);
    let mut mismatches = 0usize;
    let mut prior_dev = 0.0f64;
    let mut scored = 0;
    for i in 0..tasks {
        let mut rng = stream(seed, &format!("proto-equiv/{i}"));
        let k = rng.random_range(2..=5);
        let shots = rng.random_range(1..=5);
        let dim = rng.random_range(1..=6);
        let truth: Vec<usize> = (0..k * shots).map(|n| n % k).collect();
        let embeddings: Vec<Vec<f64>> = truth.iter().map(|_| gaussian_vec(&mut rng, dim, 1.0)).collect();
        let ann = Annotations::dense(k, &truth.iter().map(|&t| vec![t]).collect::<Vec<_>>())?;
        let support = SupportSet::new(embeddings.clone(), ann)?;
        let hyper = PriorHyperparams::with_zero_tau(1.0, 1.0, 1)?;
        let mut c = adapt(&support, &hyper)?;
        prior_dev = c.class_prior.iter().map(|p| (p - 1.0 / k as f64).abs()).fold(prior_dev, f64::max);
        c.class_prior = vec![1.0 / k as f64; k];
        let means: Vec<Vec<f64>> = (0..k)
            .map(|t| {
                let mut m = vec![0.0; dim];
                for (u, _) in embeddings.iter().zip(&truth).filter(|(_, &y)| y == t) {
                    m.iter_mut().zip(u).for_each(|(a, b)| *a += b / shots as f64);
                }
                m
            })
            .collect();
        for _ in 0..per_task.min(queries - scored) {
            let v = gaussian_vec(&mut rng, dim, 1.5);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (t, m) in means.iter().enumerate() {
                let d: f64 = v.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = t;
                }
            }
            if predict_label(&v, &c)? != best {
                mismatches += 1;
            }
            scored += 1;
        }
    }

    let dist = AnnotatorDistribution::meta_training_default();
    let mut ds_worst = 0.0f64;
    let ds_tasks = 50;
    for i in 0..ds_tasks {
        let mut rng = stream(seed, &format!("proto-equiv/ds/{i}"));
        let k = rng.random_range(2..=4);
        let n = rng.random_range(2..=30);
        let r = rng.random_range(1..=5);
        let j = rng.random_range(1..=6);
        let b = rng.random_range(0.5..3.0);
        // at u = 0 every prototype is 0 and the Gaussian terms cancel for any tau
        let hyper = PriorHyperparams::new(rng.random_range(0.1..3.0), b, 1.0, j)?;
        let s = random_support(&mut rng, k, n, r, 2, &dist)?;
        let same = SupportSet::new(vec![vec![0.0; 2]; n], s.annotations.clone())?;
        let c = adapt(&same, &hyper)?;
        let ds = dawid_skene(&s.annotations, &hyper)?;
        let rows: Vec<Vec<f64>> = ds.soft_labels.rows().map(<[f64]>::to_vec).collect();
        ds_worst = ds_worst.max(max_abs_diff(&rows, &c.responsibilities));
    }

    Ok(SuiteReport {
        suite: "proto-equiv",
        checks: vec![
            Check {
                name: "queries disagreeing with nearest class mean".into(),
                worst: mismatches as f64,
                threshold: 0.5,
                lower_bound: false,
                cases: scored,
            },
            Check {
                name: "class prior deviation from uniform on balanced support".into(),
                worst: prior_dev,
                threshold: 1e-12,
                lower_bound: false,
                cases: tasks,
            },
            Check {
                name: "Dawid-Skene vs EM with coincident embeddings".into(),
                worst: ds_worst,
                threshold: 1e-12,
                lower_bound: false,
                cases: ds_tasks,
            },
        ],
    })
}
