//! Policy optimization: offline group-relative training on expert-labeled
//! scenarios and online stepwise-trajectory training against the simulated
//! network, both with reference-policy likelihood ratios, clipping, and a
//! KL penalty.

mod dataset;
mod grpo;
mod stpo;

pub use dataset::{
    generate_expert_dataset, read_dataset, score_text_rollouts, write_dataset, ExpertSample,
};
pub use grpo::{greedy_accuracy, grpo_objective, grpo_train, offline_reward, RolloutGroup};
pub use stpo::{
    evaluate_mean_reward, online_train, rollout_trajectory, stepwise_rewards, stpo_objective,
    trajectory_reward, OnlineSetup, Trajectory,
};

use crate::agent::ParametricPolicy;
use crate::error::RlError;
use crate::net::Phase;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Hyperparameters shared by both training stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Completions sampled per context (k).
    pub group_size: usize,
    /// Likelihood-ratio clip threshold (epsilon).
    pub clip_epsilon: f64,
    /// KL penalty coefficient (beta).
    pub kl_beta: f64,
    /// Accuracy-reward weight; `w_acc + w_fmt` must be 1.
    pub w_acc: f64,
    /// Format-reward weight.
    pub w_fmt: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Refresh the reference snapshot every this many iterations; 0 keeps
    /// the initial reference for the whole run.
    pub ref_refresh_every: usize,
    /// Also divide group advantages by their standard deviation.
    pub normalize_by_std: bool,
    /// Use the plain likelihood-weighted stepwise objective instead of the
    /// clipped-ratio form.
    pub literal_stpo: bool,
    /// Online groups share one arrival schedule per iteration (common
    /// random numbers); otherwise each member draws fresh traffic.
    pub shared_seed_groups: bool,
    /// Weight of waiting time in the trajectory reward.
    pub queue_wait_weight: f64,
    /// Seed for completion sampling and scenario shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_beta: 0.04,
            w_acc: 0.9,
            w_fmt: 0.1,
            learning_rate: 0.05,
            iterations: 200,
            ref_refresh_every: 1,
            normalize_by_std: false,
            literal_stpo: false,
            shared_seed_groups: true,
            queue_wait_weight: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if self.group_size < 2 {
            return Err(RlError::InvalidArgument(format!(
                "group_size must be at least 2, got {}",
                self.group_size
            )));
        }
        if !(self.clip_epsilon > 0.0) {
            return Err(RlError::InvalidArgument("clip_epsilon must be positive".into()));
        }
        if !(self.kl_beta >= 0.0) {
            return Err(RlError::InvalidArgument("kl_beta must be nonnegative".into()));
        }
        if self.w_acc < 0.0 || self.w_fmt < 0.0 || (self.w_acc + self.w_fmt - 1.0).abs() > 1e-9 {
            return Err(RlError::InvalidArgument(format!(
                "reward weights must be nonnegative and sum to 1, got ({}, {})",
                self.w_acc, self.w_fmt
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(RlError::InvalidArgument("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn should_refresh(&self, iteration: usize) -> bool {
        self.ref_refresh_every != 0 && iteration % self.ref_refresh_every == 0
    }
}

/// Group-normalized advantages: each reward minus the group mean, no
/// standard-deviation division.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>, RlError> {
    if rewards.len() < 2 {
        return Err(RlError::InvalidArgument(format!(
            "advantage groups need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// Optionally rescale centered advantages by the group standard deviation.
pub(crate) fn maybe_normalize(advantages: &mut [f64], by_std: bool) {
    if !by_std {
        return;
    }
    let var =
        advantages.iter().map(|a| a * a).sum::<f64>() / advantages.len() as f64;
    let std = var.sqrt().max(1e-8);
    for a in advantages.iter_mut() {
        *a /= std;
    }
}

/// One record of the training history, serialized as line-delimited JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iter: usize,
    pub mean_reward: f64,
    pub kl: f64,
    /// Greedy agreement with the expert labels; absent for online training.
    pub accuracy: Option<f64>,
}

/// Write history records as line-delimited JSON.
pub fn write_history(mut sink: impl Write, history: &[HistoryRecord]) -> std::io::Result<()> {
    for record in history {
        serde_json::to_writer(&mut sink, record)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Per-term contribution of the clipped surrogate and its gradient.
///
/// The term is `min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)` with
/// `rho = pi(a|x) / pi_ref(a|x)`. Where the clipped branch is strictly
/// active the gradient through `rho` vanishes.
pub(crate) fn clipped_term_and_grad(
    policy: &ParametricPolicy,
    log_probs: &[f64; 4],
    ref_log_prob: f64,
    features: &[f64],
    action: Phase,
    advantage: f64,
    epsilon: f64,
    grad_scale: f64,
    grad: &mut [f64],
) -> f64 {
    let a = action.index();
    let rho = (log_probs[a] - ref_log_prob).exp();
    let clipped = rho.clamp(1.0 - epsilon, 1.0 + epsilon);
    let term = (rho * advantage).min(clipped * advantage);
    let unclipped_active = if advantage > 0.0 {
        rho <= 1.0 + epsilon
    } else if advantage < 0.0 {
        rho >= 1.0 - epsilon
    } else {
        false
    };
    if unclipped_active && grad_scale != 0.0 {
        let probs = log_probs.map(f64::exp);
        let dim = policy.feature_dim();
        for k in 0..4 {
            let indicator = (k == a) as u8 as f64;
            let coeff = grad_scale * advantage * rho * (indicator - probs[k]);
            if coeff == 0.0 {
                continue;
            }
            let row = &mut grad[k * dim..(k + 1) * dim];
            for (g, &x) in row.iter_mut().zip(features) {
                *g += coeff * x;
            }
        }
    }
    term
}

/// KL(pi || pi_ref) at one context and its gradient contribution:
/// d KL / d w[k] = p_k (log(p_k / q_k) - KL) * x.
pub(crate) fn kl_term_and_grad(
    policy: &ParametricPolicy,
    log_probs: &[f64; 4],
    ref_log_probs: &[f64; 4],
    features: &[f64],
    grad_scale: f64,
    grad: &mut [f64],
) -> f64 {
    let probs = log_probs.map(f64::exp);
    let kl: f64 = (0..4)
        .map(|k| probs[k] * (log_probs[k] - ref_log_probs[k]))
        .sum::<f64>()
        .max(0.0);
    if grad_scale != 0.0 {
        let dim = policy.feature_dim();
        for k in 0..4 {
            let coeff = grad_scale * probs[k] * (log_probs[k] - ref_log_probs[k] - kl);
            if coeff == 0.0 {
                continue;
            }
            let row = &mut grad[k * dim..(k + 1) * dim];
            for (g, &x) in row.iter_mut().zip(features) {
                *g += coeff * x;
            }
        }
    }
    kl
}

/// One guarded gradient-descent step: accept the largest halving of the
/// learning rate that does not increase the loss on the current batch.
/// Returns the accepted loss (the incoming one if every scale failed).
pub(crate) fn guarded_step(
    policy: &mut ParametricPolicy,
    grad: &[f64],
    learning_rate: f64,
    loss_before: f64,
    loss_at: impl Fn(&ParametricPolicy) -> f64,
) -> Result<f64, RlError> {
    if !loss_before.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(RlError::NumericalFailure(
            "non-finite loss or gradient".into(),
        ));
    }
    let base = policy.clone();
    let mut scale = 1.0;
    for _ in 0..12 {
        let step = learning_rate * scale;
        for (w, (b, g)) in policy
            .weights_mut()
            .iter_mut()
            .zip(base.weights().iter().zip(grad))
        {
            *w = b - step * g;
        }
        let loss = loss_at(policy);
        if loss.is_finite() && loss <= loss_before {
            return Ok(loss);
        }
        scale *= 0.5;
    }
    policy.weights_mut().copy_from_slice(base.weights());
    Ok(loss_before)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn advantages_center_the_worked_example() {
        let adv = group_advantages(&[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(adv, vec![0.5, -0.5, -0.5, 0.5]);
    }

    #[test]
    fn equal_rewards_center_to_zero() {
        let adv = group_advantages(&[0.3; 8]).unwrap();
        assert!(adv.iter().all(|&a| a.abs() < 1e-15));
    }

    #[test]
    fn advantages_sum_to_zero_over_random_groups() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let k = rng.random_range(2..64);
            let rewards: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
            let adv = group_advantages(&rewards).unwrap();
            assert!(adv.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn singleton_groups_are_rejected() {
        assert!(matches!(
            group_advantages(&[1.0]),
            Err(RlError::InvalidArgument(_))
        ));
    }

    #[test]
    fn std_normalization_is_opt_in() {
        let mut adv = group_advantages(&[1.0, 0.0]).unwrap();
        maybe_normalize(&mut adv, false);
        assert_eq!(adv, vec![0.5, -0.5]);
        maybe_normalize(&mut adv, true);
        assert!((adv[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation_catches_bad_weights() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.w_acc = 0.5;
        assert!(cfg.validate().is_err());
        cfg = TrainConfig {
            group_size: 1,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn guarded_step_rejects_uphill_moves() {
        // Minimize (w0 - 1)^2 via its gradient; an absurd learning rate
        // must be halved into acceptance rather than diverging.
        let mut policy = crate::agent::ParametricPolicy::new(3);
        let loss_fn = |p: &crate::agent::ParametricPolicy| (p.weights()[0] - 1.0).powi(2);
        let mut grad = vec![0.0; policy.weights().len()];
        for _ in 0..50 {
            grad[0] = 2.0 * (policy.weights()[0] - 1.0);
            let before = loss_fn(&policy);
            let after = guarded_step(&mut policy, &grad, 100.0, before, loss_fn).unwrap();
            assert!(after <= before);
        }
        assert!((policy.weights()[0] - 1.0).abs() < 1e-3);
    }
}
