//! The JSON metrics document written by every run.
//!
//! Wall-clock times go to a separate `timings.json` so that reruns with the
//! same seed produce byte-identical metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{CliError, CliResult};

pub const LOSS_CONVENTION: &str = "mean negative log-likelihood over query points";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: String,
    pub shots: usize,
    #[serde(rename = "R")]
    pub annotators: usize,
    pub dist: String,
    pub mean_acc: f64,
    pub stderr: f64,
    pub n_tasks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_recovery: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub iteration: usize,
    pub mean_acc: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub iterations: usize,
    pub best_iteration: usize,
    pub best_val_acc: f64,
    pub stopped_early: bool,
    pub final_loss: f64,
    pub validations: Vec<ValidationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub command: String,
    pub run_id: String,
    pub config: Config,
    pub ablation: String,
    pub loss_convention: String,
    pub cells: Vec<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
}

/// Hex digest of the command and its effective configuration.
pub fn run_id(command: &str, config: &Config, extra: &str) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update([0]);
    h.update(extra.as_bytes());
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl Metrics {
    pub fn new(command: &str, config: &Config, extra: &str) -> Self {
        Self {
            command: command.into(),
            run_id: run_id(command, config, extra),
            config: config.clone(),
            ablation: config.ablation.clone(),
            loss_convention: LOSS_CONVENTION.into(),
            cells: vec![],
            training: None,
        }
    }

    pub fn to_json(&self) -> CliResult<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
