use std::path::PathBuf;

use rlmc_core::benchmarks::{Overrides, BENCHMARKS};
use rlmc_core::solvers::{Algorithm, ArgmaxOptions, Mode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: String,
    #[serde(default)]
    pub overrides: Overrides,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    /// Used when `--out` is not given.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub runs: Vec<RunConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub paths: usize,
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            paths: 1000,
            seed: 20_240_601,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    #[serde(alias = "GD", alias = "gd")]
    GridDiscretisation,
    #[serde(alias = "CR", alias = "cr")]
    ControlRandomisation,
    #[serde(alias = "RL", alias = "rl")]
    RegressLater,
    Myopic,
}

impl From<AlgorithmName> for Algorithm {
    fn from(a: AlgorithmName) -> Self {
        match a {
            AlgorithmName::GridDiscretisation => Algorithm::GridDiscretisation,
            AlgorithmName::ControlRandomisation => Algorithm::ControlRandomisation,
            AlgorithmName::RegressLater => Algorithm::RegressLater,
            AlgorithmName::Myopic => Algorithm::Myopic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Defaults to the run's position, starting at 1.
    #[serde(default)]
    pub id: Option<String>,
    pub algorithm: AlgorithmName,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Training paths; the benchmark default when absent.
    #[serde(default)]
    pub m_paths: Option<usize>,
    #[serde(default)]
    pub grid_levels: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub backward_paths: bool,
    #[serde(default = "one")]
    pub cr_sweeps: usize,
    #[serde(default)]
    pub argmax: Option<ArgmaxOptions>,
    /// Writes `trajectory_<id>.csv` for this evaluation path.
    #[serde(default)]
    pub trajectory_path: Option<usize>,
    /// Battery only: repeat the run with storage disabled and report the difference.
    #[serde(default)]
    pub compare_without_storage: bool,
}

fn default_mode() -> Mode {
    Mode::ValueIteration
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let config: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !BENCHMARKS.contains(&self.benchmark.as_str()) {
            return Err(format!(
                "unknown benchmark `{}`; expected one of {}",
                self.benchmark,
                BENCHMARKS.join(", ")
            ));
        }
        if self.evaluation.paths == 0 {
            return Err("evaluation.paths must be positive".into());
        }
        let mut ids = std::collections::HashSet::new();
        for (k, run) in self.runs.iter().enumerate() {
            let id = run_id(run, k);
            if id.is_empty()
                || !id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return Err(format!(
                    "run id `{id}` must be non-empty and use letters, digits, - or _"
                ));
            }
            if !ids.insert(id.clone()) {
                return Err(format!("duplicate run id `{id}`"));
            }
            if run.m_paths == Some(0) {
                return Err(format!("run {id}: m_paths must be positive"));
            }
            if run.grid_levels.is_some_and(|l| l < 2) {
                return Err(format!("run {id}: grid_levels must be at least 2"));
            }
            if run.cr_sweeps == 0 {
                return Err(format!("run {id}: cr_sweeps must be positive"));
            }
            if run.backward_paths
                && !(run.algorithm == AlgorithmName::RegressLater
                    && run.mode == Mode::PerformanceIteration)
            {
                return Err(format!(
                    "run {id}: backward_paths needs regress_later in performance_iteration mode"
                ));
            }
            if run.compare_without_storage && self.benchmark != "battery" {
                return Err(format!(
                    "run {id}: compare_without_storage applies to the battery benchmark only"
                ));
            }
            if run
                .trajectory_path
                .is_some_and(|p| p >= self.evaluation.paths)
            {
                return Err(format!(
                    "run {id}: trajectory_path exceeds the evaluation path count"
                ));
            }
        }
        Ok(())
    }
}

pub fn run_id(run: &RunConfig, index: usize) -> String {
    run.id.clone().unwrap_or_else(|| (index + 1).to_string())
}
