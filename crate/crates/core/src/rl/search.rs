use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{train, RunResult, TrainConfig};
use crate::discretize::CellPair;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::searchspace::sample_random_cell;
use crate::supernet::{build_discrete_network, SupernetConfig};

/// Final return of one cell across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl CellScore {
    pub fn from_returns(per_seed: Vec<f64>) -> Self {
        let n = per_seed.len().max(1) as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let var = per_seed.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            per_seed,
        }
    }
}

/// Trains a fresh network built from `cell`; `seed` drives both init and training.
pub fn train_cell(
    space: &SupernetConfig,
    cell: &CellPair,
    env: &EnvConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RunResult> {
    let net = build_discrete_network(
        space,
        &cell.normal,
        cell.reduction.as_ref(),
        env.obs_shape(),
        seed,
    )?;
    Ok(train(net, env, cfg, seed)?.0)
}

/// Trains the cell from fresh weights once per seed.
pub fn evaluate_cell(
    space: &SupernetConfig,
    cell: &CellPair,
    env: &EnvConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<(CellScore, Vec<RunResult>)> {
    if seeds.is_empty() {
        return Err(Error::Config(
            "evaluate_cell needs at least one seed".into(),
        ));
    }
    let runs = seeds
        .iter()
        .map(|&seed| train_cell(space, cell, env, cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    let score = CellScore::from_returns(runs.iter().map(|r| r.final_return).collect());
    Ok((score, runs))
}

#[derive(Clone, Debug)]
pub struct RandomSearchResult {
    pub best: usize,
    pub cells: Vec<CellPair>,
    pub scores: Vec<CellScore>,
    /// Env steps spent over all cells and seeds.
    pub steps: u64,
}

impl RandomSearchResult {
    pub fn best_cell(&self) -> &CellPair {
        &self.cells[self.best]
    }

    pub fn best_score(&self) -> &CellScore {
        &self.scores[self.best]
    }
}

/// Samples `budget_cells` cells, trains each under `cfg` per seed and keeps the best
/// mean. Ties go to the earlier cell.
pub fn random_search<R: Rng + ?Sized>(
    budget_cells: usize,
    space: &SupernetConfig,
    env: &EnvConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
    rng: &mut R,
) -> Result<RandomSearchResult> {
    if budget_cells == 0 {
        return Err(Error::Config(
            "random search budget must be at least one cell".into(),
        ));
    }
    let topo = space.topology()?;
    let normal_set = space.normal_set()?;
    let reduction_set = if space.reduction_cells > 0 {
        Some(space.reduction_set()?)
    } else {
        None
    };
    let mut cells = Vec::with_capacity(budget_cells);
    let mut scores = Vec::with_capacity(budget_cells);
    let mut steps = 0;
    let mut best = 0;
    for i in 0..budget_cells {
        let cell = CellPair {
            normal: sample_random_cell(rng, &normal_set, &topo, space.merge),
            reduction: reduction_set
                .as_ref()
                .map(|s| sample_random_cell(rng, s, &topo, space.merge)),
        };
        let (score, runs) = evaluate_cell(space, &cell, env, cfg, seeds)?;
        steps += runs.iter().map(|r| r.steps).sum::<u64>();
        if score.mean
            > scores
                .get(best)
                .map_or(f64::NEG_INFINITY, |s: &CellScore| s.mean)
        {
            best = i;
        }
        cells.push(cell);
        scores.push(score);
    }
    Ok(RandomSearchResult {
        best,
        cells,
        scores,
        steps,
    })
}
