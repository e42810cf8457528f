//! The subcommands, as library functions that write their artifacts and
//! return the metrics document.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crowdmeta::annotators::{annotate, sample_annotators, AnnotatorDistribution, AnnotatorProfile};
use crowdmeta::baselines::{dawid_skene, label_accuracy, majority_vote};
use crowdmeta::data::{generate_synthetic, load_csv, split_classes, Episode, EpisodeShape, SyntheticSpec};
use crowdmeta::encoder::{EncoderConfig, EncoderParams};
use crowdmeta::meta::{evaluate_method, meta_train, EvalSettings, MetaConfig, Method};
use crowdmeta::rng::{child_seed, stream};
use crowdmeta::verify::{run_suite, SuiteReport, SUITES};

use crate::benchmark::{self, sample_tasks, BenchmarkSettings, Splits};
use crate::config::{dist_label, Config};
use crate::error::{CliError, CliResult};
use crate::metrics::{Cell, Metrics, TrainingSummary, ValidationRecord};

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const METRICS: &str = "metrics.json";
pub const TIMINGS: &str = "timings.json";

fn prepare_out(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn write_text(path: PathBuf, text: &str) -> CliResult<()> {
    std::fs::write(&path, text).map_err(|e| CliError::io(path, e))
}

fn write_timings(out: &Path, phases: &[(&str, f64)]) -> CliResult<()> {
    let map: serde_json::Map<String, serde_json::Value> =
        phases.iter().map(|(k, v)| (format!("{k}_ms"), (*v).into())).collect();
    write_text(out.join(TIMINGS), &(serde_json::to_string_pretty(&map)? + "\n"))
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

pub fn load_splits(cfg: &Config) -> CliResult<Splits> {
    let ds = if cfg.data == "synthetic" {
        generate_synthetic(&SyntheticSpec {
            num_classes: cfg.num_classes,
            dim: cfg.dim,
            spread: cfg.spread,
            examples_per_class: cfg.examples_per_class,
            seed: child_seed(cfg.seed, "data"),
        })?
    } else {
        load_csv(Path::new(&cfg.data), &cfg.label_column)?
    };
    let (train, val, test) = split_classes(&ds, (cfg.split[0], cfg.split[1], cfg.split[2]), child_seed(cfg.seed, "split"))?;
    Ok(Splits { train, val, test })
}

fn shape(cfg: &Config, shots: usize) -> EpisodeShape {
    EpisodeShape::new(cfg.ways, shots, cfg.query_per_class)
}

fn test_tasks(cfg: &Config, splits: &Splits, shots: usize) -> CliResult<Vec<Episode>> {
    Ok(sample_tasks(&splits.test, &shape(cfg, shots), cfg.test_tasks, cfg.seed, &format!("test/{shots}"))?)
}

/// Annotator distributions of the evaluation grid: the spammer-ratio sweep
/// when one is configured, otherwise the listed target distributions.
pub fn grid_dists(cfg: &Config) -> CliResult<Vec<AnnotatorDistribution>> {
    if cfg.spammer_ratios.is_empty() {
        Ok(cfg.targets())
    } else {
        Ok(cfg
            .spammer_ratios
            .iter()
            .map(|&r| AnnotatorDistribution::with_spammer_ratio(r))
            .collect::<crowdmeta::Result<_>>()?)
    }
}

struct CellSpec {
    shots: usize,
    annotators: usize,
    dist: AnnotatorDistribution,
}

/// Scores `method` on every (shots, R, dist) cell in key order.
fn run_grid(
    cfg: &Config,
    splits: &Splits,
    method: Method,
    encoder: &EncoderParams,
    with_recovery: bool,
) -> CliResult<Vec<Cell>> {
    let hyper = cfg.hyper()?;
    let dists = grid_dists(cfg)?;
    let mut tasks = Vec::with_capacity(cfg.shots.len());
    for &s in &cfg.shots {
        tasks.push(test_tasks(cfg, splits, s)?);
    }
    let mut specs = Vec::new();
    for (si, &shots) in cfg.shots.iter().enumerate() {
        for &annotators in &cfg.annotators {
            for dist in &dists {
                specs.push((si, CellSpec { shots, annotators, dist: dist.clone() }));
            }
        }
    }
    specs
        .par_iter()
        .map(|(si, spec)| {
            let label = dist_label(&spec.dist);
            let settings = EvalSettings {
                annotators: spec.annotators,
                dist: spec.dist.clone(),
                hyper,
                seed: child_seed(cfg.seed, &format!("target/{}/{}/{label}", spec.shots, spec.annotators)),
            };
            let report = evaluate_method(method, encoder, &tasks[*si], &settings)?;
            Ok(Cell {
                method: method.name().into(),
                shots: spec.shots,
                annotators: spec.annotators,
                dist: label,
                mean_acc: report.mean_accuracy,
                stderr: report.stderr,
                n_tasks: report.tasks.len(),
                label_recovery: with_recovery.then_some(report.mean_label_recovery),
            })
        })
        .collect()
}

pub fn meta_config(cfg: &Config, input_dim: usize) -> CliResult<MetaConfig> {
    let enc = EncoderConfig::new(input_dim, cfg.hidden_dims.clone(), cfg.embed_dim, child_seed(cfg.seed, "init"))?;
    let mut m = MetaConfig::new(enc, child_seed(cfg.seed, "train"));
    m.ways = cfg.ways;
    m.shots = cfg.shots[0];
    m.query_per_class = cfg.query_per_class;
    m.annotators = cfg.annotators[0];
    m.pseudo_dist = cfg.pseudo();
    m.val_dist = cfg.pseudo();
    m.hyper = cfg.hyper()?;
    m.adam = cfg.adam();
    m.max_iterations = cfg.max_iterations;
    m.validation_interval = cfg.validation_interval;
    m.patience = cfg.patience;
    m.meta_batch = cfg.meta_batch;
    m.ablation = cfg.ablation_mode();
    Ok(m)
}

/// Meta-trains on the training classes and writes the best checkpoint, the
/// per-iteration log and the metrics document with one test cell per target
/// distribution at the training shape.
pub fn cmd_meta_train(cfg: &Config, out: &Path) -> CliResult<Metrics> {
    let started = Instant::now();
    prepare_out(out)?;
    let splits = load_splits(cfg)?;
    let mc = meta_config(cfg, splits.train.dim())?;
    let val = if cfg.val_tasks == 0 {
        vec![]
    } else {
        sample_tasks(&splits.val, &mc.shape(), cfg.val_tasks, cfg.seed, "val")?
    };
    let t_train = Instant::now();
    let outcome = meta_train(&splits.train, &val, &mc)?;
    let train_ms = ms(t_train);
    info!("trained {} iterations, best at {}", outcome.log.len(), outcome.best_iteration);

    outcome.best.save(&out.join(CHECKPOINT))?;
    let mut log = String::from("iteration,loss,wall_ms,pseudo_hash\n");
    for r in &outcome.log {
        writeln!(log, "{},{},{:.3},{:016x}", r.iteration, r.loss, r.wall_ms, r.pseudo_hash).expect("string write");
    }
    write_text(out.join(TRAIN_LOG), &log)?;

    let mut eval_cfg = cfg.clone();
    eval_cfg.shots.truncate(1);
    eval_cfg.annotators.truncate(1);
    let t_eval = Instant::now();
    let mut metrics = Metrics::new("meta-train", cfg, "");
    metrics.cells = run_grid(&eval_cfg, &splits, Method::Ours, &outcome.best, false)?;
    metrics.training = Some(TrainingSummary {
        iterations: outcome.log.len(),
        best_iteration: outcome.best_iteration,
        best_val_acc: outcome.best_score,
        stopped_early: outcome.stopped_early,
        final_loss: outcome.log.last().map_or(f64::NAN, |r| r.loss),
        validations: outcome
            .validations
            .iter()
            .map(|v| ValidationRecord {
                iteration: v.iteration,
                mean_acc: v.mean_accuracy,
                stderr: v.stderr,
            })
            .collect(),
    });
    metrics.write(&out.join(METRICS))?;
    write_timings(out, &[("train", train_ms), ("evaluate", ms(t_eval)), ("total", ms(started))])?;
    Ok(metrics)
}

fn load_encoder(path: &Path, input_dim: usize) -> CliResult<EncoderParams> {
    let enc = EncoderParams::load(path)?;
    if enc.config().input_dim != input_dim {
        return Err(crowdmeta::Error::DimensionMismatch {
            context: "checkpoint input vs data features",
            expected: input_dim,
            actual: enc.config().input_dim,
        }
        .into());
    }
    Ok(enc)
}

/// Scores a checkpoint over the configured shots x R x distribution grid.
pub fn cmd_evaluate(cfg: &Config, checkpoint: &Path, out: &Path) -> CliResult<Metrics> {
    let started = Instant::now();
    prepare_out(out)?;
    let splits = load_splits(cfg)?;
    let enc = load_encoder(checkpoint, splits.test.dim())?;
    let bytes = std::fs::read(checkpoint).map_err(|e| CliError::io(checkpoint, e))?;
    let digest: String = Sha256::digest(&bytes)[..8].iter().map(|b| format!("{b:02x}")).collect();
    let mut metrics = Metrics::new("evaluate", cfg, &digest);
    metrics.cells = run_grid(cfg, &splits, Method::Ours, &enc, true)?;
    metrics.write(&out.join(METRICS))?;
    write_timings(out, &[("total", ms(started))])?;
    Ok(metrics)
}

pub fn parse_baseline(name: &str) -> CliResult<(Method, bool)> {
    match name {
        "mv" => Ok((Method::ProtoMv, false)),
        "ds" => Ok((Method::Ds, false)),
        "proto-mv" => Ok((Method::ProtoMv, true)),
        "proto-ds" => Ok((Method::ProtoDs, true)),
        other => Err(CliError::Usage(format!(
            "unknown baseline `{other}` (mv, ds, proto-mv, proto-ds)"
        ))),
    }
}

/// Label aggregation baselines. `mv` and `ds` classify by class means of
/// their hard labels on raw features; the `proto-` variants use a
/// meta-learned checkpoint.
pub fn cmd_baseline(cfg: &Config, method: &str, checkpoint: Option<&Path>, out: &Path) -> CliResult<Metrics> {
    let (m, needs_encoder) = parse_baseline(method)?;
    let started = Instant::now();
    prepare_out(out)?;
    let splits = load_splits(cfg)?;
    let enc = match (needs_encoder, checkpoint) {
        (true, Some(p)) => load_encoder(p, splits.test.dim())?,
        (true, None) => return Err(CliError::Usage(format!("baseline {method} needs --checkpoint"))),
        (false, _) => EncoderParams::identity(splits.test.dim())?,
    };
    let mut metrics = Metrics::new(&format!("baseline {method}"), cfg, "");
    metrics.cells = run_grid(cfg, &splits, m, &enc, true)?;
    for c in &mut metrics.cells {
        c.method = method.into();
    }
    metrics.write(&out.join(METRICS))?;
    write_timings(out, &[("total", ms(started))])?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulatedTask {
    pub shots: usize,
    #[serde(rename = "R")]
    pub annotators: usize,
    pub dist: String,
    pub truth: Vec<usize>,
    pub profiles: Vec<AnnotatorProfile>,
    /// Per annotator, rows indexed by reported label.
    pub confusions: Vec<Vec<Vec<f64>>>,
    /// Per example, `(annotator, label)` pairs.
    pub annotations: Vec<Vec<(usize, usize)>>,
    pub mv_recovery: f64,
    pub ds_recovery: f64,
}

/// Draws one target task per (R, dist) cell and writes the sampled
/// annotators and their labels for inspection.
pub fn cmd_simulate(cfg: &Config, out: &Path) -> CliResult<Vec<SimulatedTask>> {
    prepare_out(out)?;
    let splits = load_splits(cfg)?;
    let hyper = cfg.hyper()?;
    let mut result = Vec::new();
    for &shots in &cfg.shots {
        let ep = sample_tasks(&splits.test, &shape(cfg, shots), 1, cfg.seed, &format!("simulate/{shots}"))?.remove(0);
        for &r in &cfg.annotators {
            for dist in grid_dists(cfg)? {
                let label = dist_label(&dist);
                let mut rng = stream(cfg.seed, &format!("simulate/{shots}/{r}/{label}"));
                let (profiles, confusions) = sample_annotators(r, &dist, ep.ways(), &mut rng)?;
                let ann = annotate(&ep.support_labels, &confusions, &mut rng)?;
                let mv = majority_vote(&ann)?;
                let ds = dawid_skene(&ann, &hyper)?;
                result.push(SimulatedTask {
                    shots,
                    annotators: r,
                    dist: label,
                    truth: ep.support_labels.clone(),
                    profiles,
                    confusions: confusions.iter().map(|c| c.rows()).collect(),
                    annotations: ann.iter().map(<[_]>::to_vec).collect(),
                    mv_recovery: label_accuracy(&mv.labels, &ep.support_labels),
                    ds_recovery: label_accuracy(&ds.hard_labels(), &ep.support_labels),
                });
            }
        }
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        command: &'static str,
        run_id: String,
        config: &'a Config,
        tasks: &'a [SimulatedTask],
    }
    let doc = Doc {
        command: "simulate",
        run_id: crate::metrics::run_id("simulate", cfg, ""),
        config: cfg,
        tasks: &result,
    };
    write_text(out.join("simulate.json"), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    Ok(result)
}

/// Runs one suite, or every suite for `all`.
pub fn cmd_verify(suite: &str, seed: u64) -> CliResult<Vec<SuiteReport>> {
    let names: Vec<&str> = if suite == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&suite) {
        vec![suite]
    } else {
        return Err(CliError::Usage(format!("unknown suite `{suite}` (all, {})", SUITES.join(", "))));
    };
    names
        .into_iter()
        .map(|n| Ok(run_suite(n, seed).expect("known suite")?))
        .collect()
}

/// The synthetic comparison of ours, w/o-PA and the prototype baselines.
pub fn cmd_benchmark(settings: &BenchmarkSettings, out: &Path) -> CliResult<Vec<Cell>> {
    let started = Instant::now();
    prepare_out(out)?;
    let results = benchmark::run(settings)?;
    let label = dist_label(&settings.target_dist);
    let mut cells = Vec::new();
    for r in &results {
        for (name, rep) in [
            ("ours", &r.ours),
            ("w/o-pa", &r.without_pseudo),
            ("proto-mv", &r.proto_mv),
            ("proto-ds", &r.proto_ds),
        ] {
            cells.push(Cell {
                method: name.into(),
                shots: r.shots,
                annotators: settings.annotators,
                dist: label.clone(),
                mean_acc: rep.mean_accuracy,
                stderr: rep.stderr,
                n_tasks: rep.tasks.len(),
                label_recovery: Some(rep.mean_label_recovery),
            });
        }
    }
    write_text(out.join(METRICS), &(serde_json::to_string_pretty(&cells)? + "\n"))?;
    write_timings(out, &[("total", ms(started))])?;
    Ok(cells)
}
