//! Group Relative Policy Optimization.
//!
//! For each prompt, `G` trajectories are sampled from a frozen copy of the
//! current policy; rewards are normalized inside the group to form
//! advantages, and the policy descends
//!
//! ```text
//! L = -(1/G) sum_i [ min(rho_i A_i, clip(rho_i, 1-eps, 1+eps) A_i) - beta KL_i ]
//! rho_i = pi_theta(o_i) / pi_old(o_i)
//! KL_i  = pi_ref(o_i)/pi_theta(o_i) - log(pi_ref(o_i)/pi_theta(o_i)) - 1
//! ```
//!
//! with sequence-level ratios and log-ratios clamped before exponentiation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{run_episode, sample_episode, verify, EnvConfig, Episode, Split, Taxonomy};
use crate::policy::{accumulate_logprob_grad, actions_logprob, HeadActions, Mode, PolicyParams, NUM_PARAMS};
use crate::reward::{RewardBreakdown, RewardConfig};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("group has {got} trajectories, expected {expected}")]
    GroupSizeMismatch { expected: usize, got: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_coef: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub log_ratio_clamp: f64,
    /// Prompts (episodes) per iteration.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            clip_epsilon: 0.2,
            kl_coef: 0.04,
            learning_rate: 0.05,
            iterations: 600,
            log_ratio_clamp: 20.0,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::InvalidConfig(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return bad("kl_coef must be non-negative");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be non-negative");
        }
        if !(self.log_ratio_clamp > 0.0) {
            return bad("log_ratio_clamp must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

/// Group-normalized advantages with population standard deviation. A group
/// with (numerically) constant rewards gets all-zero advantages.
pub fn compute_advantages(rewards: &[f64], group_size: usize) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() != group_size {
        return Err(GrpoError::GroupSizeMismatch {
            expected: group_size,
            got: rewards.len(),
        });
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(GrpoError::NonFiniteInput);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

fn clamp_log_ratio(x: f64, limit: f64) -> (f64, bool) {
    if x > limit {
        (limit, true)
    } else if x < -limit {
        (-limit, true)
    } else {
        (x, false)
    }
}

/// `exp(u) - u - 1` with `u = logp_ref - logp_theta` clamped to `±clamp`.
pub fn kl_estimate(logp_theta: f64, logp_ref: f64, clamp: f64) -> Result<f64, GrpoError> {
    if !logp_theta.is_finite() || !logp_ref.is_finite() {
        return Err(GrpoError::NonFiniteInput);
    }
    let (u, _) = clamp_log_ratio(logp_ref - logp_theta, clamp);
    Ok(u.exp_m1() - u)
}

/// `min(rho A, clip(rho, 1-eps, 1+eps) A)`.
pub fn surrogate_term(logp_theta: f64, logp_old: f64, advantage: f64, eps: f64, clamp: f64) -> Result<f64, GrpoError> {
    if !logp_theta.is_finite() || !logp_old.is_finite() || !advantage.is_finite() {
        return Err(GrpoError::NonFiniteInput);
    }
    let (lr, _) = clamp_log_ratio(logp_theta - logp_old, clamp);
    let rho = lr.exp();
    Ok((rho * advantage).min(rho.clamp(1.0 - eps, 1.0 + eps) * advantage))
}

/// One group member `o_i`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub episode_id: u64,
    pub member: usize,
    pub first_text: String,
    pub second_text: String,
    /// `None` when the rollout failed; such members keep a zero reward in the
    /// group but carry no gradient.
    pub actions: Option<HeadActions>,
    pub logp_theta: f64,
    pub logp_old: f64,
    pub logp_ref: f64,
    pub reward: RewardBreakdown,
    pub advantage: f64,
}

/// Loss for one group using the stored `logp_theta`.
pub fn grpo_loss(group: &[Trajectory], cfg: &GrpoConfig) -> Result<f64, GrpoError> {
    if group.len() != cfg.group_size {
        return Err(GrpoError::GroupSizeMismatch {
            expected: cfg.group_size,
            got: group.len(),
        });
    }
    let mut acc = 0.0;
    for t in group {
        let s = surrogate_term(t.logp_theta, t.logp_old, t.advantage, cfg.clip_epsilon, cfg.log_ratio_clamp)?;
        let k = kl_estimate(t.logp_theta, t.logp_ref, cfg.log_ratio_clamp)?;
        acc += s - cfg.kl_coef * k;
    }
    Ok(-acc / group.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub mean_kl: f64,
    pub clip_fraction: f64,
}

/// Mean group loss over `groups` and its analytic gradient, with every
/// `logp_theta` recomputed under `params`.
pub fn grpo_objective(params: &PolicyParams, groups: &[Vec<Trajectory>], cfg: &GrpoConfig) -> Result<LossEval, GrpoError> {
    let mut grad = vec![0.0; NUM_PARAMS];
    let mut loss = 0.0;
    let (mut kl_sum, mut clipped, mut count) = (0.0, 0usize, 0usize);
    let eps = cfg.clip_epsilon;
    let limit = cfg.log_ratio_clamp;
    let per_group = 1.0 / groups.len().max(1) as f64;
    for group in groups {
        if group.len() != cfg.group_size {
            return Err(GrpoError::GroupSizeMismatch {
                expected: cfg.group_size,
                got: group.len(),
            });
        }
        let scale = per_group / group.len() as f64;
        for t in group {
            let logp = match &t.actions {
                Some(a) => actions_logprob(params, a),
                None => t.logp_theta,
            };
            if !logp.is_finite() || !t.logp_old.is_finite() || !t.logp_ref.is_finite() {
                return Err(GrpoError::NonFiniteInput);
            }
            let a = t.advantage;

            let (lr, lr_clamped) = clamp_log_ratio(logp - t.logp_old, limit);
            let rho = lr.exp();
            let unclipped = rho * a;
            let clipped_val = rho.clamp(1.0 - eps, 1.0 + eps) * a;
            let surrogate = unclipped.min(clipped_val);
            // d surrogate / d logp: rho A on the unclipped branch, 0 otherwise
            let d_surr = if unclipped <= clipped_val && !lr_clamped { unclipped } else { 0.0 };
            if (rho - 1.0).abs() > eps {
                clipped += 1;
            }

            let (u, u_clamped) = clamp_log_ratio(t.logp_ref - logp, limit);
            let kl = u.exp_m1() - u;
            // d kl / d logp = -(e^u - 1)
            let d_kl = if u_clamped { 0.0 } else { -u.exp_m1() };

            loss -= scale * (surrogate - cfg.kl_coef * kl);
            kl_sum += kl;
            count += 1;
            if let Some(actions) = &t.actions {
                let coef = -scale * (d_surr - cfg.kl_coef * d_kl);
                accumulate_logprob_grad(params, actions, coef, &mut grad);
            }
        }
    }
    Ok(LossEval {
        loss,
        grad,
        mean_kl: if count == 0 { 0.0 } else { kl_sum / count as f64 },
        clip_fraction: if count == 0 { 0.0 } else { clipped as f64 / count as f64 },
    })
}

/// Mean KL penalty over all trajectories and its gradient.
pub fn kl_objective(params: &PolicyParams, groups: &[Vec<Trajectory>], clamp: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; NUM_PARAMS];
    let n = groups.iter().map(Vec::len).sum::<usize>().max(1) as f64;
    let mut total = 0.0;
    for t in groups.iter().flatten() {
        let Some(actions) = &t.actions else { continue };
        let logp = actions_logprob(params, actions);
        let (u, clamped) = clamp_log_ratio(t.logp_ref - logp, clamp);
        total += (u.exp_m1() - u) / n;
        if !clamped {
            accumulate_logprob_grad(params, actions, -u.exp_m1() / n, &mut grad);
        }
    }
    (total, grad)
}

/// Environment, taxonomy and reward settings shared by every rollout.
#[derive(Debug, Clone, Copy)]
pub struct RolloutSetup<'a> {
    pub taxonomy: &'a Taxonomy,
    pub env: &'a EnvConfig,
    pub reward: &'a RewardConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub loss: f64,
    pub accuracy: f64,
}

/// Samples `G` trajectories per episode from `old`, scores them and fills in
/// advantages. Member `i` of batch slot `b` draws from the stream
/// `(seed, iteration, b, i)`.
pub fn collect_groups(
    old: &PolicyParams,
    reference: &PolicyParams,
    episodes: &[Episode],
    setup: RolloutSetup<'_>,
    cfg: &GrpoConfig,
    iteration: usize,
) -> Result<Vec<Vec<Trajectory>>, GrpoError> {
    let mut groups = Vec::with_capacity(episodes.len());
    for (b, ep) in episodes.iter().enumerate() {
        let mut group = Vec::with_capacity(cfg.group_size);
        for member in 0..cfg.group_size {
            let mut r = rng::stream(cfg.seed, Purpose::Rollout, &[iteration as u64, b as u64, member as u64]);
            let traj = match run_episode(old, ep, setup.taxonomy, setup.env, Mode::Sample, &mut r) {
                Ok(roll) => {
                    let reward = verify(setup.taxonomy, ep, &roll.first_text, &roll.second_text, setup.reward);
                    let logp_old = roll.logp.total();
                    Trajectory {
                        episode_id: ep.id,
                        member,
                        logp_theta: logp_old,
                        logp_old,
                        logp_ref: actions_logprob(reference, &roll.actions),
                        actions: Some(roll.actions),
                        first_text: roll.first_text,
                        second_text: roll.second_text,
                        reward,
                        advantage: 0.0,
                    }
                }
                Err(_) => Trajectory {
                    episode_id: ep.id,
                    member,
                    first_text: String::new(),
                    second_text: String::new(),
                    actions: None,
                    logp_theta: 0.0,
                    logp_old: 0.0,
                    logp_ref: 0.0,
                    reward: RewardBreakdown::default(),
                    advantage: 0.0,
                },
            };
            group.push(traj);
        }
        let signals: Vec<f64> = group.iter().map(|t| t.reward.signal(setup.reward)).collect();
        let adv = compute_advantages(&signals, cfg.group_size)?;
        for (t, a) in group.iter_mut().zip(adv) {
            t.advantage = a;
        }
        groups.push(group);
    }
    Ok(groups)
}

/// One GRPO iteration: snapshot `pi_old`, roll out, take one gradient step.
pub fn train_step(
    policy: &mut PolicyParams,
    reference: &PolicyParams,
    episodes: &[Episode],
    setup: RolloutSetup<'_>,
    cfg: &GrpoConfig,
    iteration: usize,
) -> Result<StepMetrics, GrpoError> {
    let old = policy.snapshot();
    let groups = collect_groups(&old, reference, episodes, setup, cfg, iteration)?;
    let eval = grpo_objective(policy, &groups, cfg)?;
    if !eval.loss.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
        return Err(GrpoError::NonFiniteInput);
    }
    policy.descend(&eval.grad, cfg.learning_rate);

    let all: Vec<&Trajectory> = groups.iter().flatten().collect();
    let n = all.len().max(1) as f64;
    Ok(StepMetrics {
        iteration,
        mean_reward: all.iter().map(|t| t.reward.total).sum::<f64>() / n,
        mean_kl: eval.mean_kl,
        clip_fraction: eval.clip_fraction,
        loss: eval.loss,
        accuracy: all.iter().map(|t| t.reward.r_acc).sum::<f64>() / n,
    })
}

fn batch_for(pool: Option<&[Episode]>, setup: RolloutSetup<'_>, cfg: &GrpoConfig, iteration: usize) -> Vec<Episode> {
    let mut r = rng::stream(cfg.seed, Purpose::TrainEpisode, &[iteration as u64]);
    match pool {
        Some(pool) if !pool.is_empty() => {
            if pool.len() >= cfg.batch_size {
                pool.choose_multiple(&mut r, cfg.batch_size).cloned().collect()
            } else {
                (0..cfg.batch_size).map(|_| pool.choose(&mut r).cloned().unwrap()).collect()
            }
        }
        _ => {
            let classes = setup.taxonomy.split_classes(Split::Base);
            (0..cfg.batch_size)
                .map(|b| {
                    let id = (iteration * cfg.batch_size + b) as u64;
                    sample_episode(setup.taxonomy, &classes, setup.env, id, &mut r)
                })
                .collect()
        }
    }
}

/// Runs `cfg.iterations` GRPO steps. Prompts are drawn from `pool` when given,
/// otherwise fresh base-split episodes are sampled.
pub fn train(
    policy: &mut PolicyParams,
    reference: &PolicyParams,
    pool: Option<&[Episode]>,
    setup: RolloutSetup<'_>,
    cfg: &GrpoConfig,
) -> Result<Vec<StepMetrics>, GrpoError> {
    cfg.validate()?;
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch = batch_for(pool, setup, cfg, it);
        log.push(train_step(policy, reference, &batch, setup, cfg, it)?);
    }
    Ok(log)
}
