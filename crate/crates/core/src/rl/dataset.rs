//! Expert-labeled scenario datasets: synthetic oracle generation, JSONL
//! persistence, and logging-only scoring for external text policies.

use super::{group_advantages, TrainConfig};
use crate::agent::{parse_response, render_prompt, Prompt};
use crate::control::random_next;
use crate::env::EpisodeConfig;
use crate::error::RlError;
use crate::net::{GridNetwork, Phase};
use crate::sim::{spawn_flow, FlowSpec, Observation, Sim};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// One expert-labeled scenario: the observation, optional incident text,
/// and the validated action only (no reasoning is stored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSample {
    pub observation: Observation,
    pub incident: Option<String>,
    pub expert_action: Phase,
}

impl ExpertSample {
    /// Prompt a text policy would receive for this scenario.
    pub fn prompt(&self) -> Prompt {
        render_prompt(&self.observation, self.incident.as_deref(), &[])
    }
}

/// Generate `size` expert samples by snapshotting observations from
/// randomized rollouts and labeling each snapshot with the oracle's
/// decision on it.
///
/// Rollouts are driven by a uniform-random controller so snapshots cover
/// diverse congestion states; prefix lengths vary with the snapshot
/// probability. Deterministic given the flow spec seed.
pub fn generate_expert_dataset(
    network: &GridNetwork,
    flow: &FlowSpec,
    oracle: impl Fn(&Observation) -> Phase,
    size: usize,
    episode: &EpisodeConfig,
) -> Vec<ExpertSample> {
    let mut samples = Vec::with_capacity(size);
    let mut rng = ChaCha12Rng::seed_from_u64(flow.seed ^ 0xDA7A);
    let mut episode_idx = 0u64;
    // Skip the initial fill-up so snapshots see developed queues.
    let warmup_s = episode.horizon_s / 3;
    while samples.len() < size {
        let seed = flow.seed.wrapping_add(episode_idx.wrapping_mul(0x9E37_79B9));
        episode_idx += 1;
        let schedule = spawn_flow(&flow.with_seed(seed), network, episode.horizon_s);
        let mut sim = Sim::new(network.clone(), schedule, episode.sim.clone());
        for _ in 0..episode.horizon_s {
            for id in sim.pending_decisions() {
                // Snapshot roughly one post-warmup decision in five.
                if samples.len() < size && sim.time_s() >= warmup_s && rng.random::<f64>() < 0.2 {
                    let observation = sim.observe(id);
                    let expert_action = oracle(&observation);
                    samples.push(ExpertSample {
                        observation,
                        incident: None,
                        expert_action,
                    });
                }
                let phase = random_next(&mut rng);
                sim.set_phase(id, phase).expect("decision instant");
            }
            if samples.len() >= size {
                break;
            }
            sim.tick();
        }
    }
    samples.truncate(size);
    samples
}

/// Write a dataset as line-delimited JSON, one sample per line.
pub fn write_dataset(path: &Path, samples: &[ExpertSample]) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for sample in samples {
        serde_json::to_writer(&mut file, sample)?;
        file.write_all(b"\n")?;
    }
    file.flush()
}

/// Read a dataset written by [`write_dataset`]; parse failures name the
/// offending line.
pub fn read_dataset(path: &Path) -> Result<Vec<ExpertSample>, RlError> {
    let file = std::fs::File::open(path)
        .map_err(|e| RlError::InvalidArgument(format!("open {}: {e}", path.display())))?;
    let mut samples = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line =
            line.map_err(|e| RlError::InvalidArgument(format!("line {}: {e}", idx + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: ExpertSample = serde_json::from_str(&line)
            .map_err(|e| RlError::InvalidArgument(format!("line {}: {e}", idx + 1)))?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Scored rollout record exported for external preference tuning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredCompletion {
    pub scenario: usize,
    pub completion: usize,
    pub text: String,
    pub action: Option<Phase>,
    pub format_ok: bool,
    pub reward: f64,
    pub advantage: f64,
}

/// Query an external text policy `k` times per scenario, score each
/// completion with the offline rule-based reward, center the rewards within
/// each group, and export the records as line-delimited JSON.
///
/// This is logging-only: no weight update crosses the wire.
pub fn score_text_rollouts(
    dataset: &[ExpertSample],
    respond: &mut dyn FnMut(&Prompt) -> String,
    cfg: &TrainConfig,
    mut sink: impl Write,
) -> Result<f64, RlError> {
    cfg.validate()?;
    let mut reward_sum = 0.0;
    let mut count = 0usize;
    for (scenario, sample) in dataset.iter().enumerate() {
        let prompt = sample.prompt();
        let texts: Vec<String> = (0..cfg.group_size).map(|_| respond(&prompt)).collect();
        let rewards: Vec<f64> = texts
            .iter()
            .map(|t| super::grpo::offline_reward(&parse_response(t), sample.expert_action, cfg))
            .collect();
        let advantages = group_advantages(&rewards)?;
        for (completion, text) in texts.iter().enumerate() {
            let parsed = parse_response(text);
            let record = ScoredCompletion {
                scenario,
                completion,
                text: text.clone(),
                action: parsed.action,
                format_ok: parsed.format_ok,
                reward: rewards[completion],
                advantage: advantages[completion],
            };
            serde_json::to_writer(&mut sink, &record)
                .map_err(|e| RlError::InvalidArgument(format!("export: {e}")))?;
            sink.write_all(b"\n")
                .map_err(|e| RlError::InvalidArgument(format!("export: {e}")))?;
            reward_sum += rewards[completion];
            count += 1;
        }
    }
    Ok(reward_sum / count.max(1) as f64)
}
