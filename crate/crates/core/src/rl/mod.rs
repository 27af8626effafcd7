//! PPO and dueling double-DQN training over supernet, discrete, or baseline encoders.
//!
//! With a supernet encoder one Adam optimizer updates weights and α together from
//! the RL loss; otherwise only weights are trained.

mod agent;
mod checkpoint;
mod dqn;
mod metrics;
mod ppo;
mod replay;
mod search;
mod vecenv;

use serde::{Deserialize, Serialize};

pub use agent::{sample_categorical, PolicyNet, QNet};
pub use checkpoint::Checkpoint;
pub use dqn::{double_dqn_targets, dqn_loss, n_step_return, DqnConfig};
pub use metrics::{
    metrics_csv, parse_metrics_csv, read_metrics_csv, write_metrics_csv, MetricsRow, METRICS_HEADER,
};
pub use ppo::{gae_advantages, ppo_loss, PpoConfig};
pub use replay::{ReplayBuffer, SharedReplayBuffer, Transition};
pub use search::{evaluate_cell, random_search, train_cell, CellScore, RandomSearchResult};
pub use vecenv::{EnvStep, EpisodeStat, VecEnv};

use crate::diffcore::{ParamKind, ParamStore};
use crate::discretize::{snapshot_alpha, AlphaSnapshot};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::supernet::{CellRole, Network};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Ppo,
    Dqn,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::Dqn => "dqn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Environment steps, summed over parallel envs.
    pub budget: u64,
    pub num_envs: usize,
    /// Threads stepping the envs; 1 keeps everything on the learner thread.
    pub workers: usize,
    /// α snapshot cadence in learner updates.
    pub snapshot_every: u64,
    /// Episodes averaged into `mean_return`.
    pub return_window: usize,
    /// Episodes played by the untrained policy for the initial evaluation.
    pub eval_episodes: usize,
    /// Keep α at its initial (uniform) value.
    pub freeze_alpha: bool,
    pub ppo: PpoConfig,
    pub dqn: DqnConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ppo,
            budget: 100_000,
            num_envs: 8,
            workers: 1,
            snapshot_every: 100,
            return_window: 50,
            eval_episodes: 8,
            freeze_alpha: false,
            ppo: PpoConfig::default(),
            dqn: DqnConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_envs == 0
            || self.workers == 0
            || self.return_window == 0
            || self.snapshot_every == 0
        {
            return Err(Error::Config(
                "num_envs, workers, return_window and snapshot_every must be positive".into(),
            ));
        }
        match self.algorithm {
            Algorithm::Ppo => self.ppo.validate(),
            Algorithm::Dqn => self.dqn.validate(),
        }
    }
}

/// Outcome of one training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunResult {
    pub metrics: Vec<MetricsRow>,
    pub snapshots: Vec<AlphaSnapshot>,
    /// Mean return of the untrained policy.
    pub initial_return: f64,
    /// Mean return over the last `return_window` training episodes; the initial
    /// evaluation when no episode finished.
    pub final_return: f64,
    pub episodes: u64,
    pub steps: u64,
    pub updates: u64,
}

/// α snapshot of a network, `None` for encoders without α.
pub fn network_snapshot<T: crate::Scalar>(
    net: &Network<T>,
    step: u64,
) -> Result<Option<AlphaSnapshot>> {
    match net.arch_params(CellRole::Normal) {
        Some(normal) => {
            let reduction = net.arch_params(CellRole::Reduction);
            snapshot_alpha(&normal, reduction.as_ref(), step).map(Some)
        }
        None => Ok(None),
    }
}

/// Zeroes gradients of frozen parameters so they do not enter norm clipping.
pub(crate) fn mask_frozen(params: &ParamStore<f32>, grads: &mut [Tensor<f32>]) {
    for (id, p) in params.iter() {
        if p.frozen {
            grads[id.index()]
                .data_mut()
                .iter_mut()
                .for_each(|g| *g = 0.0);
        }
    }
}

pub(crate) fn prepare_alpha(params: &mut ParamStore<f32>, freeze: bool) {
    params.set_frozen(ParamKind::Arch, freeze);
}

pub(crate) fn diverged(step: u64, detail: String, last: Option<&AlphaSnapshot>) -> Error {
    Error::Diverged {
        step,
        detail,
        last_alpha: last.map(AlphaSnapshot::to_json_line),
    }
}

/// Trains an encoder with the configured algorithm. The network gains RL heads.
pub fn train(
    net: Network<f32>,
    env: &EnvConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(RunResult, ParamStore<f32>)> {
    cfg.validate()?;
    env.validate()?;
    if net.input_shape() != env.obs_shape() {
        return Err(Error::Config(format!(
            "encoder input {:?} does not match observations {:?}",
            net.input_shape(),
            env.obs_shape()
        )));
    }
    match cfg.algorithm {
        Algorithm::Ppo => ppo::train_ppo(net, env, cfg, seed),
        Algorithm::Dqn => dqn::train_dqn(net, env, cfg, seed),
    }
}

/// Derives an independent stream seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
