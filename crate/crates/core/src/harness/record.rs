use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Objective};
use crate::error::Result;
use crate::peak::PeakStats;

/// Error rates and peak statistics on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub greedy_ter: f64,
    pub prefix_ter: f64,
    pub utterances: usize,
    pub reference_tokens: usize,
    /// Computed from greedy paths.
    pub peak: PeakStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub objective: Objective,
    pub seed: u64,
    /// Full flat config; [`ExperimentConfig::from_map`] rebuilds it.
    pub config: BTreeMap<String, String>,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    pub steps: u64,
    /// Training utterances skipped as infeasible, summed over epochs.
    pub skipped: usize,
    pub dev: EvalSummary,
    pub test: EvalSummary,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::from_map(&self.config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self { wall_clock_secs: 0.0, ..self.clone() } == Self { wall_clock_secs: 0.0, ..other.clone() }
    }
}
