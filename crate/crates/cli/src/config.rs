//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Lists are comma-separated
//! and annotator distributions are colon-separated weights, either `e:h:s`
//! or `e:h:s:p:c` (pair-wise flipper and class-wise spammer last).

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crowdmeta::annotators::AnnotatorDistribution;
use crowdmeta::em::PriorHyperparams;
use crowdmeta::meta::{AdamSettings, Ablation};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub seed: u64,
    /// `synthetic` or a path to a CSV file.
    pub data: String,
    pub label_column: String,
    pub num_classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub examples_per_class: usize,
    /// Class fractions for train, validation and test.
    pub split: Vec<f64>,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub ways: usize,
    pub shots: Vec<usize>,
    pub query_per_class: usize,
    pub annotators: Vec<usize>,
    pub pseudo_dist: String,
    pub target_dists: Vec<String>,
    pub spammer_ratios: Vec<f64>,
    pub tau: f64,
    pub b: f64,
    pub c: f64,
    pub em_steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub validation_interval: usize,
    pub patience: usize,
    pub meta_batch: usize,
    pub val_tasks: usize,
    pub test_tasks: usize,
    pub ablation: String,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            data: "synthetic".into(),
            label_column: "label".into(),
            num_classes: 100,
            dim: 8,
            spread: 0.6,
            examples_per_class: 40,
            split: vec![0.5, 0.2, 0.3],
            hidden_dims: vec![32],
            embed_dim: 8,
            ways: 4,
            shots: vec![1],
            query_per_class: 10,
            annotators: vec![5],
            pseudo_dist: "0.1:0.7:0.2".into(),
            target_dists: vec!["0.1:0.6:0.3".into()],
            spammer_ratios: vec![],
            tau: 1.0,
            b: 1.0,
            c: 1.0,
            em_steps: 2,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iterations: 1000,
            validation_interval: 100,
            patience: 5,
            meta_batch: 1,
            val_tasks: 50,
            test_tasks: 50,
            ablation: "none".into(),
        }
    }
}

fn bad(key: &str, value: &str, reason: impl ToString) -> CliError {
    CliError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: reason.to_string(),
    }
}

fn scalar<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: ToString,
{
    value.parse().map_err(|e: T::Err| bad(key, value, e))
}

fn list<T: FromStr>(key: &str, value: &str) -> CliResult<Vec<T>>
where
    T::Err: ToString,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| scalar(key, s))
        .collect()
}

/// Parses `e:h:s` or `e:h:s:p:c`.
pub fn parse_dist(text: &str) -> Result<AnnotatorDistribution, String> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let weights = match parts.as_slice() {
        [e, h, s] => [*e, *h, *s, 0.0, 0.0],
        [e, h, s, p, c] => [*e, *h, *s, *p, *c],
        _ => return Err("expected 3 or 5 colon-separated weights".into()),
    };
    AnnotatorDistribution::new(weights).map_err(|e| e.to_string())
}

pub fn dist_label(dist: &AnnotatorDistribution) -> String {
    let w = dist.weights();
    let fmt: Vec<String> = w
        .iter()
        .map(|x| format!("{}", (x * 1e9).round() / 1e9))
        .collect();
    if w[3] == 0.0 && w[4] == 0.0 {
        fmt[..3].join(":")
    } else {
        fmt.join(":")
    }
}

pub fn parse_ablation(text: &str) -> Result<Ablation, String> {
    match text {
        "none" => Ok(Ablation::None),
        "no-pseudo-annotation" => Ok(Ablation::NoPseudoAnnotation),
        other => Err(format!("unknown ablation `{other}` (none, no-pseudo-annotation)")),
    }
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Config::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Syntax {
                line: i + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value)?;
            if !seen.insert(key.to_string()) {
                return Err(CliError::DuplicateKey(key.into()));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        match key {
            "seed" => self.seed = scalar(key, v)?,
            "data" => self.data = v.into(),
            "label_column" => self.label_column = v.into(),
            "num_classes" => self.num_classes = scalar(key, v)?,
            "dim" => self.dim = scalar(key, v)?,
            "spread" => self.spread = scalar(key, v)?,
            "examples_per_class" => self.examples_per_class = scalar(key, v)?,
            "split" => self.split = list(key, v)?,
            "hidden_dims" => self.hidden_dims = list(key, v)?,
            "embed_dim" => self.embed_dim = scalar(key, v)?,
            "ways" => self.ways = scalar(key, v)?,
            "shots" => self.shots = list(key, v)?,
            "query_per_class" => self.query_per_class = scalar(key, v)?,
            "annotators" => self.annotators = list(key, v)?,
            "pseudo_dist" => self.pseudo_dist = v.into(),
            "target_dists" => self.target_dists = list(key, v)?,
            "spammer_ratios" => self.spammer_ratios = list(key, v)?,
            "tau" => self.tau = scalar(key, v)?,
            "b" => self.b = scalar(key, v)?,
            "c" => self.c = scalar(key, v)?,
            "em_steps" => self.em_steps = scalar(key, v)?,
            "learning_rate" => self.learning_rate = scalar(key, v)?,
            "beta1" => self.beta1 = scalar(key, v)?,
            "beta2" => self.beta2 = scalar(key, v)?,
            "epsilon" => self.epsilon = scalar(key, v)?,
            "max_iterations" => self.max_iterations = scalar(key, v)?,
            "validation_interval" => self.validation_interval = scalar(key, v)?,
            "patience" => self.patience = scalar(key, v)?,
            "meta_batch" => self.meta_batch = scalar(key, v)?,
            "val_tasks" => self.val_tasks = scalar(key, v)?,
            "test_tasks" => self.test_tasks = scalar(key, v)?,
            "ablation" => self.ablation = v.into(),
            _ => return Err(CliError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let positive = [
            ("num_classes", self.num_classes),
            ("dim", self.dim),
            ("embed_dim", self.embed_dim),
            ("ways", self.ways),
            ("query_per_class", self.query_per_class),
            ("em_steps", self.em_steps),
            ("validation_interval", self.validation_interval),
            ("patience", self.patience),
            ("meta_batch", self.meta_batch),
            ("test_tasks", self.test_tasks),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(bad(k, "0", "must be >= 1"));
            }
        }
        if self.split.len() != 3 {
            return Err(bad("split", &format!("{:?}", self.split), "need train,val,test fractions"));
        }
        for (k, v) in [("shots", &self.shots), ("annotators", &self.annotators)] {
            if v.is_empty() || v.contains(&0) {
                return Err(bad(k, &format!("{v:?}"), "need a non-empty list of positive counts"));
            }
        }
        if self.hidden_dims.contains(&0) {
            return Err(bad("hidden_dims", &format!("{:?}", self.hidden_dims), "widths must be >= 1"));
        }
        parse_dist(&self.pseudo_dist).map_err(|e| bad("pseudo_dist", &self.pseudo_dist, e))?;
        if self.target_dists.is_empty() {
            return Err(bad("target_dists", "", "need at least one distribution"));
        }
        for d in &self.target_dists {
            parse_dist(d).map_err(|e| bad("target_dists", d, e))?;
        }
        for &r in &self.spammer_ratios {
            AnnotatorDistribution::with_spammer_ratio(r).map_err(|e| bad("spammer_ratios", &r.to_string(), e))?;
        }
        parse_ablation(&self.ablation).map_err(|e| bad("ablation", &self.ablation, e))?;
        self.hyper().map_err(|e| bad("tau/b/c/em_steps", "", e))?;
        self.adam().validate().map_err(|e| bad("learning_rate/beta1/beta2/epsilon", "", e))?;
        Ok(())
    }

    pub fn hyper(&self) -> crowdmeta::Result<PriorHyperparams> {
        PriorHyperparams::new(self.tau, self.b, self.c, self.em_steps)
    }

    pub fn adam(&self) -> AdamSettings {
        AdamSettings {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn pseudo(&self) -> AnnotatorDistribution {
        parse_dist(&self.pseudo_dist).expect("validated")
    }

    pub fn targets(&self) -> Vec<AnnotatorDistribution> {
        self.target_dists.iter().map(|d| parse_dist(d).expect("validated")).collect()
    }

    pub fn ablation_mode(&self) -> Ablation {
        parse_ablation(&self.ablation).expect("validated")
    }
}
