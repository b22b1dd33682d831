//! Online stepwise-trajectory policy optimization: whole-episode rollouts
//! on the simulated network, trajectory rewards distributed uniformly over
//! steps, group-centered advantages, and per-step clipped updates.

use super::{
    clipped_term_and_grad, guarded_step, kl_term_and_grad, maybe_normalize, HistoryRecord,
    TrainConfig,
};
use crate::agent::{ParametricAgent, ParametricPolicy, StepRecord};
use crate::env::{run_episode, EpisodeConfig};
use crate::error::RlError;
use crate::net::GridNetwork;
use crate::sim::{spawn_flow, FlowSpec, MetricsReport};
use std::sync::Arc;

/// One full-episode trajectory: every decision across the network in time
/// order, plus the episode-level reward.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub total_reward: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Uniform per-step share of the trajectory reward.
    pub fn step_reward(&self) -> f64 {
        self.total_reward / self.steps.len().max(1) as f64
    }
}

/// Distribute a trajectory reward uniformly over `steps` steps.
pub fn stepwise_rewards(total_reward: f64, steps: usize) -> Result<Vec<f64>, RlError> {
    if steps == 0 {
        return Err(RlError::InvalidArgument(
            "trajectories need at least one step".into(),
        ));
    }
    Ok(vec![total_reward / steps as f64; steps])
}

/// Trajectory reward of one episode: the negated sum of the per-
/// intersection average queue and the weighted average waiting time. Lower
/// queues and waits give strictly greater reward.
pub fn trajectory_reward(report: &MetricsReport, wait_weight: f64) -> f64 {
    -(report.avg_queue + wait_weight * report.awt_s)
}

/// Negated stepwise objective over a group of trajectories rolled from the
/// frozen reference, and its analytic gradient.
///
/// Advantages are the group-centered per-step rewards, constant within one
/// trajectory. The default form applies the clipped likelihood ratio and a
/// per-step KL penalty at every `(observation, action)` pair; the literal
/// form weights plain log-likelihoods by the advantage.
pub fn stpo_objective(
    policy: &ParametricPolicy,
    reference: &ParametricPolicy,
    trajectories: &[Trajectory],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>), RlError> {
    let mut grad = vec![0.0; policy.weights().len()];
    let loss = stpo_loss(policy, reference, trajectories, cfg, Some(&mut grad))?;
    Ok((loss, grad))
}

fn step_advantages(trajectories: &[Trajectory], cfg: &TrainConfig) -> Result<Vec<f64>, RlError> {
    if trajectories.len() < 2 {
        return Err(RlError::InvalidArgument(format!(
            "stepwise groups need at least 2 trajectories, got {}",
            trajectories.len()
        )));
    }
    if trajectories.iter().any(|t| t.is_empty()) {
        return Err(RlError::InvalidArgument(
            "trajectories need at least one step".into(),
        ));
    }
    let step_rewards: Vec<f64> = trajectories.iter().map(|t| t.step_reward()).collect();
    let mean = step_rewards.iter().sum::<f64>() / step_rewards.len() as f64;
    let mut advantages: Vec<f64> = step_rewards.iter().map(|r| r - mean).collect();
    maybe_normalize(&mut advantages, cfg.normalize_by_std);
    Ok(advantages)
}

fn stpo_loss(
    policy: &ParametricPolicy,
    reference: &ParametricPolicy,
    trajectories: &[Trajectory],
    cfg: &TrainConfig,
    mut grad: Option<&mut [f64]>,
) -> Result<f64, RlError> {
    let advantages = step_advantages(trajectories, cfg)?;
    let total_steps: usize = trajectories.iter().map(|t| t.len()).sum();
    let scale = 1.0 / total_steps as f64;
    let wants_grad = grad.is_some();
    let mut objective = 0.0;
    for (trajectory, &advantage) in trajectories.iter().zip(&advantages) {
        for step in &trajectory.steps {
            let log_probs = policy.log_probs(&step.features);
            if log_probs.iter().any(|l| !l.is_finite()) {
                return Err(RlError::NumericalFailure(
                    "non-finite log-probability".into(),
                ));
            }
            if cfg.literal_stpo {
                objective += scale * log_probs[step.action.index()] * advantage;
                if let Some(grad) = grad.as_deref_mut() {
                    // d(log pi)/dw through the softmax, weighted by -A/N.
                    let probs = log_probs.map(f64::exp);
                    let dim = policy.feature_dim();
                    for k in 0..4 {
                        let indicator = (k == step.action.index()) as u8 as f64;
                        let coeff = -scale * advantage * (indicator - probs[k]);
                        if coeff == 0.0 {
                            continue;
                        }
                        let row = &mut grad[k * dim..(k + 1) * dim];
                        for (g, &x) in row.iter_mut().zip(&step.features) {
                            *g += coeff * x;
                        }
                    }
                }
            } else {
                let ref_log_probs = reference.log_probs(&step.features);
                let term = clipped_term_and_grad(
                    policy,
                    &log_probs,
                    ref_log_probs[step.action.index()],
                    &step.features,
                    step.action,
                    advantage,
                    cfg.clip_epsilon,
                    if wants_grad { -scale } else { 0.0 },
                    grad.as_deref_mut().unwrap_or(&mut []),
                );
                let kl = kl_term_and_grad(
                    policy,
                    &log_probs,
                    &ref_log_probs,
                    &step.features,
                    if wants_grad { scale * cfg.kl_beta } else { 0.0 },
                    grad.as_deref_mut().unwrap_or(&mut []),
                );
                objective += scale * (term - cfg.kl_beta * kl);
            }
        }
    }
    Ok(-objective)
}

/// Online environment description for training and evaluation.
#[derive(Debug, Clone)]
pub struct OnlineSetup {
    pub network: GridNetwork,
    pub flow: FlowSpec,
    pub episode: EpisodeConfig,
}

fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ c.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Roll one episode with every intersection driven by `policy` (sampling),
/// returning the pooled trajectory and the episode metrics.
pub fn rollout_trajectory(
    setup: &OnlineSetup,
    policy: &Arc<ParametricPolicy>,
    env_seed: u64,
    action_seed: u64,
    wait_weight: f64,
) -> (Trajectory, MetricsReport) {
    let schedule = spawn_flow(&setup.flow.with_seed(env_seed), &setup.network, setup.episode.horizon_s);
    let mut agents: Vec<ParametricAgent> = setup
        .network
        .intersections()
        .enumerate()
        .map(|(i, _)| ParametricAgent::new(policy.clone(), mix_seed(action_seed, i as u64, 0x5eed)))
        .collect();
    let outcome = run_episode(&setup.network, schedule, &mut agents, &setup.episode, None);
    let mut steps = Vec::new();
    for agent in &mut agents {
        steps.append(&mut agent.take_steps());
    }
    let total_reward = trajectory_reward(&outcome.metrics, wait_weight);
    (
        Trajectory {
            steps,
            total_reward,
        },
        outcome.metrics,
    )
}

/// Mean trajectory reward of `policy` (sampling actions) over the given
/// held-out environment seeds.
pub fn evaluate_mean_reward(
    setup: &OnlineSetup,
    policy: &ParametricPolicy,
    seeds: &[u64],
    action_seed: u64,
    wait_weight: f64,
) -> f64 {
    let shared = Arc::new(policy.clone());
    let total: f64 = seeds
        .iter()
        .map(|&s| {
            rollout_trajectory(setup, &shared, s, mix_seed(action_seed, s, 1), wait_weight)
                .0
                .total_reward
        })
        .sum();
    total / seeds.len().max(1) as f64
}

/// Train the policy online: each iteration rolls `k` full episodes from
/// the frozen reference (with the asynchronous communication network
/// active, per the episode config), scores them with [`trajectory_reward`],
/// and takes one guarded stepwise update. With `shared_seed_groups` every
/// group member replays the same arrival schedule, so advantage differences
/// come from the policy's own sampling.
pub fn online_train(
    setup: &OnlineSetup,
    policy: &mut ParametricPolicy,
    cfg: &TrainConfig,
) -> Result<Vec<HistoryRecord>, RlError> {
    cfg.validate()?;
    let mut reference = Arc::new(policy.clone());
    let mut history = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        if cfg.should_refresh(iter) {
            reference = Arc::new(policy.clone());
        }
        let trajectories: Vec<Trajectory> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..cfg.group_size)
                .map(|member| {
                    let reference = reference.clone();
                    let env_seed = if cfg.shared_seed_groups {
                        mix_seed(cfg.seed, iter as u64, 0)
                    } else {
                        mix_seed(cfg.seed, iter as u64, member as u64 + 1)
                    };
                    let action_seed = mix_seed(cfg.seed ^ 0xAC71, iter as u64, member as u64);
                    scope.spawn(move || {
                        rollout_trajectory(
                            setup,
                            &reference,
                            env_seed,
                            action_seed,
                            cfg.queue_wait_weight,
                        )
                        .0
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });

        let mean_reward = trajectories.iter().map(|t| t.total_reward).sum::<f64>()
            / trajectories.len() as f64;
        let (loss, grad) = stpo_objective(policy, &reference, &trajectories, cfg)?;
        if !loss.is_finite() {
            return Err(RlError::Diverged {
                iteration: iter,
                detail: format!("loss {loss}"),
            });
        }
        guarded_step(policy, &grad, cfg.learning_rate, loss, |p| {
            stpo_loss(p, &reference, &trajectories, cfg, None).unwrap_or(f64::INFINITY)
        })
        .map_err(|e| RlError::Diverged {
            iteration: iter,
            detail: e.to_string(),
        })?;

        // Mean KL to the reference over a bounded sample of step contexts.
        let mut kl_sum = 0.0;
        let mut kl_n = 0usize;
        for step in trajectories.iter().flat_map(|t| t.steps.iter()).take(512) {
            kl_sum += policy.kl_divergence(&reference, &step.features);
            kl_n += 1;
        }
        history.push(HistoryRecord {
            iter,
            mean_reward,
            kl: if kl_n == 0 { 0.0 } else { kl_sum / kl_n as f64 },
            accuracy: None,
        });
    }
    Ok(history)
}
