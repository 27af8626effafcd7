use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agent::{sample_categorical, PolicyNet};
use super::metrics::LossAccum;
use super::vecenv::{play_episodes, VecEnv};
use super::{
    derive_seed, diverged, mask_frozen, network_snapshot, prepare_alpha, MetricsRow, RunResult,
    TrainConfig,
};
use crate::diffcore::{clip_global_norm, Adam, Graph, NodeId, ParamStore, PpoTargets};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::supernet::Network;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    /// Multiplier on `lr` for α logits.
    pub alpha_lr_scale: f64,
    /// Steps per env between updates.
    pub rollout_len: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            lr: 5e-4,
            alpha_lr_scale: 1.0,
            rollout_len: 128,
            minibatch: 128,
            epochs: 3,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.gamma) || !unit(self.lambda) {
            return Err(Error::Config("gamma and lambda must lie in (0, 1]".into()));
        }
        if !(self.clip > 0.0) || !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(Error::Config(
                "clip, lr and max_grad_norm must be positive".into(),
            ));
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 || self.alpha_lr_scale < 0.0 {
            return Err(Error::Config(
                "loss coefficients must be non-negative".into(),
            ));
        }
        if self.rollout_len == 0 || self.minibatch == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "rollout_len, minibatch and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Generalized advantage estimation over one env's sequence. `dones[t]` marks that the
/// episode ended at step t; `last_value` bootstraps the final step.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Shape(format!(
            "gae: {n} rewards, {} values, {} dones",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Clipped PPO loss node with advantages normalized over the minibatch.
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    logits: NodeId,
    values: NodeId,
    actions: &[usize],
    logp_old: &[f64],
    advantages: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
) -> Result<NodeId> {
    let n = advantages.len().max(1) as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    let to_t = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<_>>();
    let targets = PpoTargets {
        actions: actions.to_vec(),
        logp_old: to_t(logp_old),
        advantages: advantages.iter().map(|a| T::of((a - mean) / std)).collect(),
        returns: to_t(returns),
        clip: cfg.clip,
        value_coef: cfg.value_coef,
        entropy_coef: cfg.entropy_coef,
    };
    g.ppo_loss(logits, values, targets)
}

fn initial_eval(
    agent: &PolicyNet<f32>,
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    play_episodes(env, episodes, seed, |obs| {
        let n = obs.dim(0);
        let (logits, _) = agent.evaluate(obs)?;
        let k = logits.len() / n;
        Ok((0..n)
            .map(|i| sample_categorical(&logits[i * k..(i + 1) * k], &mut rng).0)
            .collect())
    })
}

struct Rollout {
    obs: Vec<f32>,
    actions: Vec<usize>,
    logp: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
}

fn gather_obs(obs: &[f32], idx: &[usize], shape: [usize; 3]) -> Tensor<f32> {
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(idx.len() * len);
    for &i in idx {
        data.extend_from_slice(&obs[i * len..(i + 1) * len]);
    }
    Tensor::from_vec(&[idx.len(), shape[0], shape[1], shape[2]], data).expect("minibatch")
}

pub(super) fn train_ppo(
    net: Network<f32>,
    env: &EnvConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(RunResult, ParamStore<f32>)> {
    let p = &cfg.ppo;
    let shape = net.input_shape();
    let mut agent = PolicyNet::new(net, derive_seed(seed, 1));
    prepare_alpha(&mut agent.net.params, cfg.freeze_alpha);
    let mut adam = Adam::new(&agent.net.params, p.lr);
    adam.alpha_lr_scale = p.alpha_lr_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));

    let mut result = RunResult {
        initial_return: initial_eval(&agent, env, cfg.eval_episodes, derive_seed(seed, 3))?,
        ..RunResult::default()
    };
    let mut last_snap = network_snapshot(&agent.net, 0)?;
    result.snapshots.extend(last_snap.clone());

    let n = cfg.num_envs;
    let mut venv =
        VecEnv::new(env, n, derive_seed(seed, 4), cfg.return_window)?.with_workers(cfg.workers);
    let obs_len = venv.obs_len();
    let mut steps = 0u64;
    let mut updates = 0u64;
    loop {
        let t_len = (p.rollout_len as u64).min((cfg.budget - steps) / n as u64) as usize;
        if t_len == 0 {
            break;
        }
        let total = t_len * n;
        let mut ro = Rollout {
            obs: Vec::with_capacity(total * obs_len),
            actions: Vec::with_capacity(total),
            logp: Vec::with_capacity(total),
            values: Vec::with_capacity(total),
            rewards: Vec::with_capacity(total),
            dones: Vec::with_capacity(total),
        };
        for _ in 0..t_len {
            let batch = venv.batch();
            let (logits, values) = agent.evaluate(batch.clone())?;
            ro.obs.extend_from_slice(batch.data());
            let k = logits.len() / n;
            let mut actions = Vec::with_capacity(n);
            for i in 0..n {
                let (a, lp) = sample_categorical(&logits[i * k..(i + 1) * k], &mut rng);
                actions.push(a);
                ro.logp.push(lp);
                ro.values.push(f64::from(values[i]));
            }
            for s in venv.step(&actions)? {
                ro.rewards.push(s.reward);
                ro.dones.push(s.done);
            }
            ro.actions.extend(actions);
        }
        steps += total as u64;
        let (_, last_values) = agent.evaluate(venv.batch())?;

        // Rollout storage is time-major; GAE runs per env.
        let mut adv = vec![0.0; total];
        let mut ret = vec![0.0; total];
        for i in 0..n {
            let pick = |v: &[f64]| (0..t_len).map(|t| v[t * n + i]).collect::<Vec<_>>();
            let dones: Vec<bool> = (0..t_len).map(|t| ro.dones[t * n + i]).collect();
            let (a, r) = gae_advantages(
                &pick(&ro.rewards),
                &pick(&ro.values),
                &dones,
                f64::from(last_values[i]),
                p.gamma,
                p.lambda,
            )?;
            for t in 0..t_len {
                adv[t * n + i] = a[t];
                ret[t * n + i] = r[t];
            }
        }

        let mut acc = LossAccum::default();
        let mut order: Vec<usize> = (0..total).collect();
        for _ in 0..p.epochs {
            order.shuffle(&mut rng);
            for idx in order.chunks(p.minibatch) {
                let pick = |v: &[f64]| idx.iter().map(|&j| v[j]).collect::<Vec<_>>();
                let actions: Vec<usize> = idx.iter().map(|&j| ro.actions[j]).collect();
                let mut g = Graph::new(&agent.net.params);
                let x = g.input(gather_obs(&ro.obs, idx, shape));
                let (logits, values) = agent.forward(&mut g, x)?;
                let loss = ppo_loss(
                    &mut g,
                    logits,
                    values,
                    &actions,
                    &pick(&ro.logp),
                    &pick(&adv),
                    &pick(&ret),
                    p,
                )?;
                let lv = f64::from(g.value(loss).data()[0]);
                let terms = g.ppo_terms(loss).expect("ppo node");
                if !lv.is_finite() {
                    return Err(diverged(
                        steps,
                        format!("PPO loss {lv}"),
                        last_snap.as_ref(),
                    ));
                }
                let mut grads = g.backward(loss)?.into_params();
                drop(g);
                mask_frozen(&agent.net.params, &mut grads);
                let norm = clip_global_norm(&mut grads, p.max_grad_norm);
                if !norm.is_finite() {
                    return Err(diverged(
                        steps,
                        format!("gradient norm {norm}"),
                        last_snap.as_ref(),
                    ));
                }
                adam.step(&mut agent.net.params, &grads);
                updates += 1;
                acc.add(lv, -terms.clip_objective, terms.value_loss, terms.entropy);
                if updates % cfg.snapshot_every == 0 {
                    last_snap = network_snapshot(&agent.net, steps)?;
                    result.snapshots.extend(last_snap.clone());
                }
            }
        }
        if !agent.net.params.all_finite() {
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
        if let Some(s) = network_snapshot(&agent.net, steps)? {
            row.alpha_max_dev = s.max_dev_from_uniform();
        }
        acc.fill(&mut row);
        result.metrics.push(row);
    }
    if let Some(end) = network_snapshot(&agent.net, steps)? {
        if result.snapshots.last() != Some(&end) {
            result.snapshots.push(end);
        }
    }
    result.final_return = venv.mean_return().unwrap_or(result.initial_return);
    result.episodes = venv.episodes();
    result.steps = steps;
    result.updates = updates;
    Ok((result, agent.net.params))
}
