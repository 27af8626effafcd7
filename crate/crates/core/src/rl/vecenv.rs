use std::collections::VecDeque;

use crate::envs::{normalized_score, Env, EnvConfig, GameSpec, Step};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::derive_seed;

/// Steps one env; on episode end also returns the observation after reset.
fn step_one(env: &mut dyn Env, action: usize) -> Result<(Step, usize, Option<Vec<f32>>)> {
    let s = env.step(action)?;
    let game = env.game_index();
    let reset = s.done.then(|| env.reset());
    Ok((s, game, reset))
}

/// A finished episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStat {
    pub game: usize,
    pub raw_return: f64,
    pub normalized: f64,
    pub length: u32,
}

/// Result of one env in a lockstep step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvStep {
    /// Learner reward.
    pub reward: f64,
    pub done: bool,
    pub episode: Option<EpisodeStat>,
}

/// Parallel copies of an environment stepped in lockstep, with automatic resets.
pub struct VecEnv {
    envs: Vec<Box<dyn Env>>,
    games: Vec<GameSpec>,
    obs: Vec<Vec<f32>>,
    shape: [usize; 3],
    raw_return: Vec<f64>,
    length: Vec<u32>,
    recent: VecDeque<EpisodeStat>,
    window: usize,
    episodes: u64,
    normalized_rewards: bool,
    workers: usize,
}

impl VecEnv {
    pub fn new(cfg: &EnvConfig, count: usize, seed: u64, window: usize) -> Result<Self> {
        let mut envs = (0..count)
            .map(|i| cfg.build(derive_seed(seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let obs = envs.iter_mut().map(|e| e.reset()).collect();
        let games = envs[0].games();
        let shape = envs[0].obs_shape();
        Ok(Self {
            envs,
            games,
            obs,
            shape,
            raw_return: vec![0.0; count],
            length: vec![0; count],
            recent: VecDeque::new(),
            window: window.max(1),
            episodes: 0,
            normalized_rewards: false,
            workers: 1,
        })
    }

    /// Feeds the learner `r / R_max` rewards in multi-game mode instead of raw ones.
    pub fn with_normalized_rewards(mut self, on: bool) -> Self {
        self.normalized_rewards = on;
        self
    }

    /// Steps envs on `workers` threads. Results do not depend on the worker count.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn obs(&self, i: usize) -> &[f32] {
        &self.obs[i]
    }

    pub fn obs_len(&self) -> usize {
        self.shape.iter().product()
    }

    /// Current observations as one `[n, h, w, c]` batch.
    pub fn batch(&self) -> Tensor<f32> {
        let [h, w, c] = self.shape;
        let data = self.obs.iter().flatten().copied().collect();
        Tensor::from_vec(&[self.envs.len(), h, w, c], data).expect("observation batch")
    }

    /// Steps every env. Finished episodes are recorded and their envs reset, so `obs`
    /// always holds live observations.
    pub fn step(&mut self, actions: &[usize]) -> Result<Vec<EnvStep>> {
        if actions.len() != self.envs.len() {
            return Err(Error::Shape(format!(
                "{} actions for {} envs",
                actions.len(),
                self.envs.len()
            )));
        }
        let raw = if self.workers > 1 {
            let chunk = self.envs.len().div_ceil(self.workers);
            std::thread::scope(|scope| {
                let handles: Vec<_> = self
                    .envs
                    .chunks_mut(chunk)
                    .zip(actions.chunks(chunk))
                    .map(|(envs, acts)| {
                        scope.spawn(move || {
                            envs.iter_mut()
                                .zip(acts)
                                .map(|(e, &a)| step_one(e.as_mut(), a))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("env worker panicked"))
                    .collect::<Vec<_>>()
            })
        } else {
            self.envs
                .iter_mut()
                .zip(actions)
                .map(|(e, &a)| step_one(e.as_mut(), a))
                .collect()
        };
        let mut out = Vec::with_capacity(self.envs.len());
        for (i, r) in raw.into_iter().enumerate() {
            let (s, game, reset) = r?;
            self.raw_return[i] += s.raw_reward;
            self.length[i] += 1;
            let mut episode = None;
            if let Some(obs) = reset {
                let spec = &self.games[game];
                let stat = EpisodeStat {
                    game,
                    raw_return: self.raw_return[i],
                    normalized: normalized_score(self.raw_return[i], spec.r_min, spec.r_max)?,
                    length: self.length[i],
                };
                self.recent.push_back(stat);
                if self.recent.len() > self.window {
                    self.recent.pop_front();
                }
                self.episodes += 1;
                self.raw_return[i] = 0.0;
                self.length[i] = 0;
                self.obs[i] = obs;
                episode = Some(stat);
            } else {
                self.obs[i] = s.obs;
            }
            out.push(EnvStep {
                reward: if self.normalized_rewards {
                    s.reward
                } else {
                    s.raw_reward
                },
                done: s.done,
                episode,
            });
        }
        Ok(out)
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn recent(&self) -> impl Iterator<Item = &EpisodeStat> {
        self.recent.iter()
    }

    /// Mean raw return over the recent window for one game; with several games, the
    /// mean over games of each game's mean normalized score. `None` before any
    /// episode finishes.
    pub fn mean_return(&self) -> Option<f64> {
        mean_return(self.recent.iter(), self.games.len())
    }
}

/// Plays one episode in each of `episodes` fresh envs with `policy` and returns the
/// mean return in [`VecEnv::mean_return`] units.
pub(crate) fn play_episodes(
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
    mut policy: impl FnMut(Tensor<f32>) -> Result<Vec<usize>>,
) -> Result<f64> {
    let n = episodes.max(1);
    let mut venv = VecEnv::new(env, n, seed, n)?;
    let mut finished = vec![false; n];
    let mut stats = Vec::with_capacity(n);
    while finished.iter().any(|f| !f) {
        let actions = policy(venv.batch())?;
        for (i, s) in venv.step(&actions)?.into_iter().enumerate() {
            if let (Some(ep), false) = (s.episode, finished[i]) {
                finished[i] = true;
                stats.push(ep);
            }
        }
    }
    Ok(mean_return(stats.iter(), env.games.len()).unwrap_or(0.0))
}

pub(crate) fn mean_return<'a>(
    stats: impl Iterator<Item = &'a EpisodeStat>,
    games: usize,
) -> Option<f64> {
    let mut sum = vec![0.0; games];
    let mut n = vec![0usize; games];
    for s in stats {
        let v = if games == 1 {
            s.raw_return
        } else {
            s.normalized
        };
        sum[s.game] += v;
        n[s.game] += 1;
    }
    let means: Vec<f64> = sum
        .iter()
        .zip(&n)
        .filter(|(_, &k)| k > 0)
        .map(|(s, &k)| s / k as f64)
        .collect();
    (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
}
