use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::QNet;
use super::metrics::LossAccum;
use super::replay::{ReplayBuffer, Transition};
use super::vecenv::{play_episodes, VecEnv};
use super::{
    derive_seed, diverged, mask_frozen, network_snapshot, prepare_alpha, MetricsRow, RunResult,
    TrainConfig,
};
use crate::diffcore::{clip_global_norm, Adam, Graph, NodeId, ParamStore};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::supernet::Network;
use crate::tensor::{Scalar, Tensor};

/// Env rounds between metrics rows.
const ROW_ROUNDS: u64 = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub gamma: f64,
    pub n_step: usize,
    pub lr: f64,
    pub alpha_lr_scale: f64,
    pub batch: usize,
    pub capacity: usize,
    /// Learner updates between target-network copies.
    pub target_sync: u64,
    /// Env steps collected before learning begins.
    pub learning_starts: u64,
    /// Env rounds (one step of every env) per learner update.
    pub train_every: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the budget over which ε decays linearly.
    pub eps_decay_fraction: f64,
    pub huber_delta: f64,
    pub max_grad_norm: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            n_step: 2,
            lr: 2.5e-4,
            alpha_lr_scale: 1.0,
            batch: 64,
            capacity: 10_000,
            target_sync: 250,
            learning_starts: 1_000,
            train_every: 1,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.5,
            huber_delta: 1.0,
            max_grad_norm: 10.0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1]".into()));
        }
        if self.n_step == 0 || self.batch == 0 || self.capacity < self.batch {
            return Err(Error::Config(
                "n_step, batch must be positive and capacity ≥ batch".into(),
            ));
        }
        if self.target_sync == 0 || self.train_every == 0 {
            return Err(Error::Config(
                "target_sync and train_every must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.huber_delta > 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(Error::Config(
                "lr, huber_delta and max_grad_norm must be positive".into(),
            ));
        }
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if !prob(self.eps_start) || !prob(self.eps_end) || !prob(self.eps_decay_fraction) {
            return Err(Error::Config("ε schedule values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn epsilon(&self, steps: u64, budget: u64) -> f64 {
        let horizon = self.eps_decay_fraction * budget as f64;
        if horizon <= 0.0 {
            return self.eps_end;
        }
        let frac = (steps as f64 / horizon).min(1.0);
        self.eps_start + frac * (self.eps_end - self.eps_start)
    }
}

/// `Σ_i γ^i r_i + γ^k · bootstrap · (1 − done)` for `k = rewards.len()`.
pub fn n_step_return(rewards: &[f64], gamma: f64, bootstrap: f64, done: bool) -> f64 {
    let mut g = 0.0;
    let mut disc = 1.0;
    for &r in rewards {
        g += disc * r;
        disc *= gamma;
    }
    if done {
        g
    } else {
        g + disc * bootstrap
    }
}

/// Double-DQN targets: the online net picks `a* = argmax Q_online(s′)`, the target net
/// values it. `discounts[i]` is `γ^k` for sample i's horizon.
pub fn double_dqn_targets(
    returns: &[f64],
    discounts: &[f64],
    dones: &[bool],
    q_online_next: &[f64],
    q_target_next: &[f64],
    num_actions: usize,
) -> Result<Vec<f64>> {
    let n = returns.len();
    if discounts.len() != n
        || dones.len() != n
        || q_online_next.len() != n * num_actions
        || q_target_next.len() != n * num_actions
    {
        return Err(Error::Shape(
            "double DQN target inputs disagree in length".into(),
        ));
    }
    Ok((0..n)
        .map(|i| {
            if dones[i] {
                return returns[i];
            }
            let row = &q_online_next[i * num_actions..(i + 1) * num_actions];
            let best = (0..num_actions).fold(0, |b, a| if row[a] > row[b] { a } else { b });
            returns[i] + discounts[i] * q_target_next[i * num_actions + best]
        })
        .collect())
}

/// Mean Huber loss between `Q(s, a)` and fixed targets.
pub fn dqn_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    q: NodeId,
    actions: &[usize],
    targets: &[f64],
    delta: f64,
) -> Result<NodeId> {
    g.huber_td(
        q,
        actions.to_vec(),
        targets.iter().map(|&t| T::of(t)).collect(),
        delta,
    )
}

fn greedy(q: &[f32], k: usize) -> Vec<usize> {
    q.chunks(k)
        .map(|row| (0..k).fold(0, |b, a| if row[a] > row[b] { a } else { b }))
        .collect()
}

fn stack(rows: &[&[f32]], shape: [usize; 3]) -> Tensor<f32> {
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Tensor::from_vec(&[rows.len(), shape[0], shape[1], shape[2]], data).expect("replay batch")
}

/// Per-env window of the last `n` (obs, action, reward) triples.
type Pending = VecDeque<(Vec<f32>, usize, f64)>;

fn emit(pending: &mut Pending, gamma: f64, s_next: &[f32], done: bool, replay: &mut ReplayBuffer) {
    let rewards: Vec<f64> = pending.iter().map(|p| p.2).collect();
    let (s, a, _) = pending.pop_front().expect("non-empty window");
    replay.push(Transition {
        s,
        a,
        r: n_step_return(&rewards, gamma, 0.0, true),
        s_next: s_next.to_vec(),
        done,
        logp_old: 0.0,
        v_old: 0.0,
        horizon: rewards.len() as u32,
    });
}

pub(super) fn train_dqn(
    net: Network<f32>,
    env: &EnvConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(RunResult, ParamStore<f32>)> {
    let d = &cfg.dqn;
    let shape = net.input_shape();
    let mut qnet = QNet::new(net, derive_seed(seed, 1));
    prepare_alpha(&mut qnet.net.params, cfg.freeze_alpha);
    let mut adam = Adam::new(&qnet.net.params, d.lr);
    adam.alpha_lr_scale = d.alpha_lr_scale;
    let mut target = qnet.net.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let num_actions = crate::envs::NUM_ACTIONS;

    let mut result = RunResult {
        initial_return: play_episodes(env, cfg.eval_episodes, derive_seed(seed, 3), |obs| {
            Ok(greedy(&qnet.q_values(&qnet.net.params, obs)?, num_actions))
        })?,
        ..RunResult::default()
    };
    let mut last_snap = network_snapshot(&qnet.net, 0)?;
    result.snapshots.extend(last_snap.clone());

    let n = cfg.num_envs;
    let mut venv = VecEnv::new(env, n, derive_seed(seed, 4), cfg.return_window)?
        .with_workers(cfg.workers)
        .with_normalized_rewards(true);
    let mut replay = ReplayBuffer::new(d.capacity, derive_seed(seed, 5))?;
    let mut pending: Vec<Pending> = vec![VecDeque::new(); n];
    let mut steps = 0u64;
    let mut updates = 0u64;
    let mut rounds = 0u64;
    let mut acc = LossAccum::default();
    while steps + n as u64 <= cfg.budget {
        let eps = d.epsilon(steps, cfg.budget);
        let q = qnet.q_values(&qnet.net.params, venv.batch())?;
        let mut actions = greedy(&q, num_actions);
        for a in actions.iter_mut() {
            if rng.random::<f64>() < eps {
                *a = rng.random_range(0..num_actions);
            }
        }
        let before: Vec<Vec<f32>> = (0..n).map(|i| venv.obs(i).to_vec()).collect();
        let out = venv.step(&actions)?;
        steps += n as u64;
        rounds += 1;
        for (i, (s, o)) in before.into_iter().zip(&out).enumerate() {
            pending[i].push_back((s, actions[i], o.reward));
            if o.done {
                while !pending[i].is_empty() {
                    emit(&mut pending[i], d.gamma, venv.obs(i), true, &mut replay);
                }
            } else if pending[i].len() == d.n_step {
                emit(&mut pending[i], d.gamma, venv.obs(i), false, &mut replay);
            }
        }

        if steps >= d.learning_starts && replay.len() >= d.batch && rounds % d.train_every == 0 {
            let batch = replay.sample(d.batch)?;
            let s = stack(
                &batch.iter().map(|t| t.s.as_slice()).collect::<Vec<_>>(),
                shape,
            );
            let s2 = stack(
                &batch
                    .iter()
                    .map(|t| t.s_next.as_slice())
                    .collect::<Vec<_>>(),
                shape,
            );
            let actions: Vec<usize> = batch.iter().map(|t| t.a).collect();
            let returns: Vec<f64> = batch.iter().map(|t| t.r).collect();
            let discounts: Vec<f64> = batch
                .iter()
                .map(|t| d.gamma.powi(t.horizon as i32))
                .collect();
            let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
            let to64 = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<_>>();
            let q_online = to64(qnet.q_values(&qnet.net.params, s2.clone())?);
            let q_target = to64(qnet.q_values(&target, s2)?);
            let targets = double_dqn_targets(
                &returns,
                &discounts,
                &dones,
                &q_online,
                &q_target,
                num_actions,
            )?;

            let mut g = Graph::new(&qnet.net.params);
            let x = g.input(s);
            let qn = qnet.forward(&mut g, x)?;
            let loss = dqn_loss(&mut g, qn, &actions, &targets, d.huber_delta)?;
            let lv = f64::from(g.value(loss).data()[0]);
            if !lv.is_finite() {
                return Err(diverged(steps, format!("TD loss {lv}"), last_snap.as_ref()));
            }
            let mut grads = g.backward(loss)?.into_params();
            drop(g);
            mask_frozen(&qnet.net.params, &mut grads);
            let norm = clip_global_norm(&mut grads, d.max_grad_norm);
            if !norm.is_finite() {
                return Err(diverged(
                    steps,
                    format!("gradient norm {norm}"),
                    last_snap.as_ref(),
                ));
            }
            adam.step(&mut qnet.net.params, &grads);
            updates += 1;
            acc.add(lv, lv, 0.0, 0.0);
            if updates % d.target_sync == 0 {
                target = qnet.net.params.clone();
            }
            if updates % cfg.snapshot_every == 0 {
                last_snap = network_snapshot(&qnet.net, steps)?;
                result.snapshots.extend(last_snap.clone());
            }
        }

        let last_round = steps + n as u64 > cfg.budget;
        if rounds % ROW_ROUNDS == 0 || last_round {
            if !qnet.net.params.all_finite() {
                return Err(diverged(
                    steps,
                    "non-finite parameters".into(),
                    last_snap.as_ref(),
                ));
            }
            let mut row = MetricsRow {
                step: steps,
                episodes: venv.episodes(),
                mean_return: venv.mean_return().unwrap_or(f64::NAN),
                ..MetricsRow::default()
            };
            if let Some(s) = network_snapshot(&qnet.net, steps)? {
                row.alpha_max_dev = s.max_dev_from_uniform();
            }
            acc.fill(&mut row);
            acc = LossAccum::default();
            result.metrics.push(row);
        }
    }
    if let Some(end) = network_snapshot(&qnet.net, steps)? {
        if result.snapshots.last() != Some(&end) {
            result.snapshots.push(end);
        }
    }
    result.final_return = venv.mean_return().unwrap_or(result.initial_return);
    result.episodes = venv.episodes();
    result.steps = steps;
    result.updates = updates;
    Ok((result, qnet.net.params))
}
