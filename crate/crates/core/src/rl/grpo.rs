//! Offline group-relative policy optimization over expert-labeled
//! scenarios: rule-based reward, group-centered advantages, and the clipped
//! surrogate objective with a KL penalty against a reference snapshot.

use super::dataset::ExpertSample;
use super::{
    clipped_term_and_grad, group_advantages, guarded_step, kl_term_and_grad, maybe_normalize,
    HistoryRecord, TrainConfig,
};
use crate::agent::{featurize, summarize_inbox, ParametricPolicy, ParsedResponse};
use crate::error::RlError;
use crate::net::Phase;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// One scenario context with its sampled completions, rewards, and
/// group-centered advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub features: Vec<f64>,
    pub actions: Vec<Phase>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    /// Center the rewards into advantages. Requires at least two
    /// completions.
    pub fn new(
        features: Vec<f64>,
        actions: Vec<Phase>,
        rewards: Vec<f64>,
        normalize_by_std: bool,
    ) -> Result<Self, RlError> {
        if actions.len() != rewards.len() {
            return Err(RlError::InvalidArgument(
                "one reward per completion".into(),
            ));
        }
        let mut advantages = group_advantages(&rewards)?;
        maybe_normalize(&mut advantages, normalize_by_std);
        Ok(RolloutGroup {
            features,
            actions,
            rewards,
            advantages,
        })
    }
}

/// Offline rule-based reward: a weighted combination of action accuracy
/// (exact match with the expert action) and format adherence.
pub fn offline_reward(parsed: &ParsedResponse, expert: Phase, cfg: &TrainConfig) -> f64 {
    let acc = (parsed.action == Some(expert)) as u8 as f64;
    let fmt = parsed.format_ok as u8 as f64;
    cfg.w_acc * acc + cfg.w_fmt * fmt
}

/// Negated clipped surrogate objective with KL penalty for one rollout
/// group, and its analytic gradient with respect to the policy weights.
pub fn grpo_objective(
    policy: &ParametricPolicy,
    reference: &ParametricPolicy,
    group: &RolloutGroup,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>), RlError> {
    let mut grad = vec![0.0; policy.weights().len()];
    let loss = grpo_group_loss(policy, reference, group, cfg, Some(&mut grad))?;
    Ok((loss, grad))
}

/// Shared loss evaluation; accumulates the gradient when `grad` is given.
fn grpo_group_loss(
    policy: &ParametricPolicy,
    reference: &ParametricPolicy,
    group: &RolloutGroup,
    cfg: &TrainConfig,
    mut grad: Option<&mut [f64]>,
) -> Result<f64, RlError> {
    let k = group.actions.len();
    if k < 2 {
        return Err(RlError::InvalidArgument("group size below 2".into()));
    }
    let log_probs = policy.log_probs(&group.features);
    let ref_log_probs = reference.log_probs(&group.features);
    if log_probs.iter().any(|l| !l.is_finite()) {
        return Err(RlError::NumericalFailure("non-finite log-probability".into()));
    }
    // Objective = mean clipped term - beta * KL; loss is its negation, so
    // gradient contributions enter with flipped sign.
    let mut objective = 0.0;
    let inv_k = 1.0 / k as f64;
    let wants_grad = grad.is_some();
    for (action, advantage) in group.actions.iter().zip(&group.advantages) {
        let term = clipped_term_and_grad(
            policy,
            &log_probs,
            ref_log_probs[action.index()],
            &group.features,
            *action,
            *advantage,
            cfg.clip_epsilon,
            if wants_grad { -inv_k } else { 0.0 },
            grad.as_deref_mut().unwrap_or(&mut []),
        );
        objective += inv_k * term;
    }
    let kl = kl_term_and_grad(
        policy,
        &log_probs,
        &ref_log_probs,
        &group.features,
        if wants_grad { cfg.kl_beta } else { 0.0 },
        grad.as_deref_mut().unwrap_or(&mut []),
    );
    objective -= cfg.kl_beta * kl;
    Ok(-objective)
}

/// Mean loss (and optional accumulated gradient) over a batch of groups.
pub(crate) fn batch_loss(
    policy: &ParametricPolicy,
    reference: &ParametricPolicy,
    groups: &[RolloutGroup],
    cfg: &TrainConfig,
    grad: Option<&mut [f64]>,
) -> Result<f64, RlError> {
    assert!(!groups.is_empty());
    let scale = 1.0 / groups.len() as f64;
    let mut total = 0.0;
    match grad {
        Some(grad) => {
            let mut group_grad = vec![0.0; policy.weights().len()];
            for group in groups {
                group_grad.iter_mut().for_each(|g| *g = 0.0);
                total += grpo_group_loss(policy, reference, group, cfg, Some(&mut group_grad))?;
                for (g, gg) in grad.iter_mut().zip(&group_grad) {
                    *g += scale * gg;
                }
            }
        }
        None => {
            for group in groups {
                total += grpo_group_loss(policy, reference, group, cfg, None)?;
            }
        }
    }
    Ok(total * scale)
}

/// Train the policy on an expert dataset.
///
/// Each iteration samples `k` completions per scenario from the frozen
/// reference, scores them with [`offline_reward`] (format reward is 1 for
/// this backend, which emits bare phase tokens), centers the rewards within
/// each group, and takes one guarded gradient step on the mean objective.
/// The reference refreshes to a snapshot of the current policy every
/// `ref_refresh_every` iterations.
pub fn grpo_train(
    dataset: &[ExpertSample],
    policy: &mut ParametricPolicy,
    cfg: &TrainConfig,
) -> Result<Vec<HistoryRecord>, RlError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(RlError::InvalidArgument("empty expert dataset".into()));
    }
    let features: Vec<Vec<f64>> = dataset
        .iter()
        .map(|s| featurize(&s.observation, &summarize_inbox(&[], &[])))
        .collect();
    let labels: Vec<Phase> = dataset.iter().map(|s| s.expert_action).collect();

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut reference = policy.clone();
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut grad = vec![0.0; policy.weights().len()];

    for iter in 0..cfg.iterations {
        if cfg.should_refresh(iter) {
            reference = policy.clone();
        }
        // Rollout wave from the frozen reference.
        let mut groups = Vec::with_capacity(dataset.len());
        let mut reward_sum = 0.0;
        for (x, &expert) in features.iter().zip(&labels) {
            let mut actions = Vec::with_capacity(cfg.group_size);
            let mut rewards = Vec::with_capacity(cfg.group_size);
            for _ in 0..cfg.group_size {
                let (action, _) = reference.sample(x, &mut rng);
                let reward = cfg.w_acc * (action == expert) as u8 as f64 + cfg.w_fmt;
                actions.push(action);
                rewards.push(reward);
            }
            reward_sum += rewards.iter().sum::<f64>();
            groups.push(RolloutGroup::new(
                x.clone(),
                actions,
                rewards,
                cfg.normalize_by_std,
            )?);
        }
        let mean_reward = reward_sum / (groups.len() * cfg.group_size) as f64;

        grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = batch_loss(policy, &reference, &groups, cfg, Some(&mut grad))?;
        if !loss.is_finite() {
            return Err(RlError::Diverged {
                iteration: iter,
                detail: format!("loss {loss}"),
            });
        }
        guarded_step(policy, &grad, cfg.learning_rate, loss, |p| {
            batch_loss(p, &reference, &groups, cfg, None).unwrap_or(f64::INFINITY)
        })
        .map_err(|e| RlError::Diverged {
            iteration: iter,
            detail: e.to_string(),
        })?;

        let kl = features
            .iter()
            .map(|x| policy.kl_divergence(&reference, x))
            .sum::<f64>()
            / features.len() as f64;
        let accuracy = greedy_accuracy(policy, &features, &labels);
        history.push(HistoryRecord {
            iter,
            mean_reward,
            kl,
            accuracy: Some(accuracy),
        });
    }
    Ok(history)
}

/// Fraction of scenarios where the greedy action matches the expert label.
pub fn greedy_accuracy(
    policy: &ParametricPolicy,
    features: &[Vec<f64>],
    labels: &[Phase],
) -> f64 {
    let hits = features
        .iter()
        .zip(labels)
        .filter(|(x, &label)| policy.argmax(x) == label)
        .count();
    hits as f64 / labels.len().max(1) as f64
}
