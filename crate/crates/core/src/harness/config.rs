use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{EnvConfig, GameKind, LevelMode};
use crate::error::{Error, Result};
use crate::rl::TrainConfig;
use crate::supernet::{BaselineVariant, SupernetConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Search, discretize and evaluate in one go.
    Pipeline,
    #[default]
    Search,
    Discretize,
    Eval,
    RandomSearch,
    Ablate,
    EnumerateSpace,
    Analyze,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pipeline => "pipeline",
            Phase::Search => "search",
            Phase::Discretize => "discretize",
            Phase::Eval => "eval",
            Phase::RandomSearch => "random-search",
            Phase::Ablate => "ablate",
            Phase::EnumerateSpace => "enumerate-space",
            Phase::Analyze => "analyze",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    UniformAlpha,
    NoreluSpace,
    PureConv3x3,
    PureConv5x5,
}

impl AblationKind {
    pub const ALL: [AblationKind; 4] = [
        AblationKind::UniformAlpha,
        AblationKind::NoreluSpace,
        AblationKind::PureConv3x3,
        AblationKind::PureConv5x5,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::UniformAlpha => "uniform_alpha",
            AblationKind::NoreluSpace => "norelu_space",
            AblationKind::PureConv3x3 => "pure_conv3x3",
            AblationKind::PureConv5x5 => "pure_conv5x5",
        }
    }

    pub fn baseline_variant(self) -> Option<BaselineVariant> {
        match self {
            AblationKind::PureConv3x3 => Some(BaselineVariant::Conv3x3),
            AblationKind::PureConv5x5 => Some(BaselineVariant::Conv5x5),
            _ => None,
        }
    }
}

/// Which α snapshot the discretize phase uses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizeConfig {
    /// Latest snapshot at or before this step; the final snapshot when unset.
    pub step: Option<u64>,
    /// Evaluate every k-th distinct cell in the cell-evolution study; 0 acts as 1.
    pub every: usize,
    /// Snapshot log to read instead of a search run's log.
    pub alpha_log: Option<PathBuf>,
}

/// From-scratch evaluation of discrete cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Block depths of the evaluation network; must dominate the search depths.
    pub depths: Vec<usize>,
    pub budget: u64,
    pub seeds: Vec<u64>,
    /// Cell file to evaluate instead of searching.
    pub cell: Option<PathBuf>,
    /// Threads for independent (cell, seed) runs.
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            depths: vec![16, 16],
            budget: 100_000,
            seeds: vec![0, 1, 2],
            cell: None,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomSearchConfig {
    /// Sampled cells; derived from the cost ratio when unset.
    pub cells: Option<usize>,
    /// Random-search env steps per supernet search step.
    pub cost_ratio: f64,
}

impl Default for RandomSearchConfig {
    fn default() -> Self {
        Self {
            cells: None,
            cost_ratio: 3.0,
        }
    }
}

impl RandomSearchConfig {
    pub fn cell_count(&self) -> usize {
        self.cells
            .unwrap_or_else(|| self.cost_ratio.round().max(1.0) as usize)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Runs every kind when unset.
    pub kind: Option<AblationKind>,
}

/// Where the Jacobian probe observations come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSource {
    /// Observations visited by a uniformly random policy.
    #[default]
    RandomPolicy,
    /// First observations of fresh levels.
    LevelStarts,
}

/// One environment in the supernet-vs-cell correlation study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisTask {
    pub name: String,
    pub env: EnvConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Train every distinct cell of the search trajectory from scratch.
    pub cell_evolution: bool,
    /// Supernet-vs-cell correlation over `tasks`.
    pub correlation: bool,
    pub tasks: Vec<AnalysisTask>,
    pub probe_batch: usize,
    pub probe_source: ProbeSource,
    pub epsilon: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let task = |name: &str, games: Vec<GameKind>, wall_density: f64| AnalysisTask {
            name: name.into(),
            env: EnvConfig {
                games,
                wall_density,
                ..EnvConfig::default()
            },
        };
        Self {
            cell_evolution: true,
            correlation: true,
            tasks: vec![
                task("chase", vec![GameKind::Chase], 0.1),
                task("chase_walls", vec![GameKind::Chase], 0.25),
                task("dodge", vec![GameKind::Dodge], 0.1),
            ],
            probe_batch: 32,
            probe_source: ProbeSource::RandomPolicy,
            epsilon: 1e-5,
        }
    }
}

/// Parameters of `enumerate-space`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaceQuery {
    pub opset: String,
    pub nodes: usize,
    pub top_k: usize,
    /// Brute-force enumeration is skipped above this many cells.
    pub enumerate_limit: u64,
}

impl Default for SpaceQuery {
    fn default() -> Self {
        Self {
            opset: "micro".into(),
            nodes: 4,
            top_k: 2,
            enumerate_limit: 1_000_000,
        }
    }
}

/// A complete experiment description, stored verbatim in every record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub phase: Phase,
    pub seed: u64,
    pub out: PathBuf,
    pub env: EnvConfig,
    pub supernet: SupernetConfig,
    pub train: TrainConfig,
    pub discretize: DiscretizeConfig,
    pub eval: EvalConfig,
    pub random_search: RandomSearchConfig,
    pub ablation: AblationConfig,
    pub analysis: AnalysisConfig,
    pub space: SpaceQuery,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            phase: Phase::Search,
            seed: 0,
            out: PathBuf::from("runs/run"),
            env: EnvConfig {
                level_mode: LevelMode::Infinite,
                ..EnvConfig::default()
            },
            supernet: SupernetConfig::default(),
            train: TrainConfig::default(),
            discretize: DiscretizeConfig::default(),
            eval: EvalConfig::default(),
            random_search: RandomSearchConfig::default(),
            ablation: AblationConfig::default(),
            analysis: AnalysisConfig::default(),
            space: SpaceQuery::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
            Error::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Canonical TOML text: every key, fixed order.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// The search-phase space with the evaluation depths.
    pub fn eval_space(&self) -> SupernetConfig {
        SupernetConfig {
            depths: self.eval.depths.clone(),
            ..self.supernet.clone()
        }
    }

    /// Training settings for from-scratch evaluation runs.
    pub fn eval_train(&self) -> TrainConfig {
        TrainConfig {
            budget: self.eval.budget,
            freeze_alpha: false,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.supernet.validate()?;
        self.train.validate()?;
        self.eval_space().validate()?;
        let (s, e) = (&self.supernet.depths, &self.eval.depths);
        if s.len() != e.len() || s.iter().zip(e).any(|(a, b)| a > b) {
            return Err(Error::Config(format!(
                "search depths {s:?} must not exceed eval depths {e:?} block by block"
            )));
        }
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("eval.seeds is empty".into()));
        }
        if self.eval.jobs == 0 {
            return Err(Error::Config("eval.jobs must be positive".into()));
        }
        if !(self.random_search.cost_ratio > 0.0) || self.random_search.cell_count() == 0 {
            return Err(Error::Config(
                "random_search needs a positive cost ratio and cell count".into(),
            ));
        }
        if self.analysis.probe_batch < 2 || !(self.analysis.epsilon > 0.0) {
            return Err(Error::Config(
                "analysis needs probe_batch ≥ 2 and epsilon > 0".into(),
            ));
        }
        for t in &self.analysis.tasks {
            t.env.validate()?;
            if t.env.obs_shape() != self.env.obs_shape() {
                return Err(Error::Config(format!(
                    "analysis task {} observation shape differs from the run's",
                    t.name
                )));
            }
        }
        Ok(())
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}
