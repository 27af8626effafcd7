use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{AblationKind, Phase, RunConfig};
use crate::discretize::CellPair;
use crate::error::{Error, Result};
use crate::rl::{CellScore, RunResult};

pub const RECORD_FILE: &str = "record.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed {
        phase: Phase,
        cause: String,
        /// True when training hit a non-finite loss, gradient or weight.
        diverged: bool,
        last_alpha: Option<String>,
    },
}

/// Summary of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub initial_return: f64,
    pub final_return: f64,
    pub steps: u64,
    pub updates: u64,
    pub episodes: u64,
    pub metrics_csv: PathBuf,
}

impl RunSummary {
    pub fn new(seed: u64, run: &RunResult, metrics_csv: PathBuf) -> Self {
        Self {
            seed,
            initial_return: run.initial_return,
            final_return: run.final_return,
            steps: run.steps,
            updates: run.updates,
            episodes: run.episodes,
            metrics_csv,
        }
    }
}

/// A distinct cell found along the α trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    /// Step of the first snapshot that discretizes to this cell.
    pub step: u64,
    pub file: PathBuf,
    pub cell: CellPair,
}

/// Scores of cells trained from scratch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub cell: CellPair,
    pub depths: Vec<usize>,
    pub score: CellScore,
    pub runs: Vec<RunSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSearchOutcome {
    pub cells: Vec<CellPair>,
    pub scores: Vec<CellScore>,
    pub best: usize,
    pub cost_ratio: f64,
    /// Search steps × cost ratio.
    pub target_steps: u64,
    pub per_run_budget: u64,
    pub total_steps: u64,
    /// From-scratch evaluation of the best sampled cell.
    pub winner: Option<EvalOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub kind: AblationKind,
    pub treatment: String,
    pub treatment_score: CellScore,
    pub control: Option<String>,
    pub control_score: Option<CellScore>,
    /// Largest edge-probability deviation from uniform at the end of each treatment run.
    pub final_alpha_dev: Vec<f64>,
    pub runs: Vec<RunSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionPoint {
    pub step: u64,
    pub score: CellScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub name: String,
    pub supernet: f64,
    pub cell: f64,
    pub baseline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutcome {
    pub tasks: Vec<TaskScores>,
    /// (supernet / baseline, cell / baseline) per kept task.
    pub normalized: Vec<(String, f64, f64)>,
    pub excluded: Vec<String>,
    pub pearson: Option<f64>,
    pub jacobian_supernet: f64,
    pub jacobian_cell: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceReport {
    pub opset: String,
    pub nonzero_ops: usize,
    pub nodes: usize,
    pub top_k: usize,
    pub size: String,
    pub enumerated: Option<u64>,
}

/// Everything an invocation produced, keyed by the hash of its config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub name: String,
    pub config_hash: String,
    pub config: String,
    pub phases: Vec<Phase>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<RunSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_log: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distinct_cells: Vec<CellEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected: Option<CellEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_search: Option<RandomSearchOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ablations: Vec<AblationOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cell_evolution: Vec<EvolutionPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceReport>,
}

impl ExperimentRecord {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            name: cfg.name.clone(),
            config_hash: cfg.hash()?,
            config: cfg.to_toml()?,
            phases: Vec::new(),
            status: RunStatus::Completed,
            search: None,
            alpha_log: None,
            distinct_cells: Vec::new(),
            selected: None,
            eval: None,
            random_search: None,
            ablations: Vec::new(),
            cell_evolution: Vec::new(),
            analysis: None,
            space: None,
        })
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::from_toml(&self.config)
    }

    /// Recomputes the hash from the stored config text.
    pub fn verify_hash(&self) -> Result<()> {
        let actual = self.run_config()?.hash()?;
        if actual != self.config_hash {
            return Err(Error::Config(format!(
                "record hash {} does not match its config ({actual})",
                self.config_hash
            )));
        }
        Ok(())
    }

    pub fn is_failed(&self) -> bool {
        matches!(self.status, RunStatus::Failed { .. })
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Failed { diverged: true, .. })
    }

    pub fn fail(&mut self, phase: Phase, err: &Error) {
        let (diverged, last_alpha) = match err {
            Error::Diverged { last_alpha, .. } => (true, last_alpha.clone()),
            _ => (false, None),
        };
        self.status = RunStatus::Failed {
            phase,
            cause: err.to_string(),
            diverged,
            last_alpha,
        };
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RECORD_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() {
            path.join(RECORD_FILE)
        } else {
            path.to_path_buf()
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let rec: Self = serde_json::from_str(&text)?;
        rec.verify_hash()?;
        Ok(rec)
    }
}
