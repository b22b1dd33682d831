//! The bridge between simulator state and decision policies: prompt
//! rendering, response parsing, featurization, agent messaging, and the two
//! policy backends (differentiable parametric softmax, external text policy
//! over a wire).

pub mod features;
pub mod policy;
pub mod prompt;
pub mod wire;

pub use features::{featurize, feature_dim, summarize_inbox, INBOX_SLOTS};
pub use policy::ParametricPolicy;
pub use prompt::{
    extract_message, parse_response, render_answer, render_prompt, ParsedResponse, Prompt,
};
pub use wire::{TextPolicyClient, DEFAULT_TIMEOUT_S};

use crate::control::{max_pressure_next, random_next, FixedTimeController, FixedTimePlan};
use crate::net::{Approach, IntersectionId, Movement, Phase};
use crate::sim::{MovementCounts, Observation};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Maximum message body length in characters; longer bodies are truncated.
pub const MAX_MESSAGE_CHARS: usize = 512;

pub(crate) fn truncate_body(body: &str) -> String {
    body.chars().take(MAX_MESSAGE_CHARS).collect()
}

/// A message passed between neighboring intersection agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub sender: IntersectionId,
    pub recipient: IntersectionId,
    pub body: String,
    /// Index of the half-step in which the sender emitted the message.
    pub issued_half_step: u64,
}

impl AgentMessage {
    /// Build a message, truncating the body to [`MAX_MESSAGE_CHARS`].
    pub fn new(
        sender: IntersectionId,
        recipient: IntersectionId,
        body: &str,
        issued_half_step: u64,
    ) -> Self {
        debug_assert_ne!(sender, recipient);
        AgentMessage {
            sender,
            recipient,
            body: truncate_body(body),
            issued_half_step,
        }
    }
}

/// Everything a policy may consult at one decision instant.
#[derive(Debug, Clone)]
pub struct DecisionContext<'a> {
    pub time_s: u32,
    pub observation: &'a Observation,
    /// Downstream stop-line queues per protected movement.
    pub downstream: &'a MovementCounts,
    /// Incident text for this intersection, including emergency advisories.
    pub incident: Option<&'a str>,
    pub inbox: &'a [AgentMessage],
    /// Emergency vehicles detected near the stop line, by (approach,
    /// movement at this intersection).
    pub emergencies: &'a [(Approach, Movement)],
}

/// Outcome of one decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub phase: Phase,
    /// Broadcast body for downstream neighbors, if the policy speaks.
    pub outgoing_message: Option<String>,
    /// Log-likelihood of the chosen phase, when the backend knows it.
    pub log_prob: Option<f64>,
}

impl Decision {
    pub fn silent(phase: Phase) -> Self {
        Decision {
            phase,
            outgoing_message: None,
            log_prob: None,
        }
    }
}

/// A per-intersection decision policy.
pub trait DecisionPolicy {
    fn decide(&mut self, ctx: &DecisionContext) -> Decision;
}

impl DecisionPolicy for Box<dyn DecisionPolicy + '_> {
    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        (**self).decide(ctx)
    }
}

/// Fixed cycle, blind to traffic.
pub struct FixedTimeAgent {
    controller: FixedTimeController,
}

impl FixedTimeAgent {
    pub fn new(plan: FixedTimePlan) -> Self {
        FixedTimeAgent {
            controller: FixedTimeController::new(plan),
        }
    }
}

impl DecisionPolicy for FixedTimeAgent {
    fn decide(&mut self, _ctx: &DecisionContext) -> Decision {
        Decision::silent(self.controller.next())
    }
}

/// Serves the highest-pressure phase.
#[derive(Default)]
pub struct MaxPressureAgent;

impl DecisionPolicy for MaxPressureAgent {
    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        Decision::silent(max_pressure_next(ctx.observation, ctx.downstream))
    }
}

/// Uniform random phase from a seeded stream.
pub struct RandomAgent {
    rng: ChaCha12Rng,
}

impl RandomAgent {
    pub fn seeded(seed: u64) -> Self {
        RandomAgent {
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }
}

impl DecisionPolicy for RandomAgent {
    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        let _ = ctx;
        Decision::silent(random_next(&mut self.rng))
    }
}

/// One recorded parametric decision, for trajectory building.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub features: Vec<f64>,
    pub action: Phase,
    pub log_prob: f64,
}

/// Stop-line queue size beyond which the parametric agent broadcasts a
/// heavy-traffic message.
pub const MESSAGE_QUEUE_THRESHOLD: u32 = 5;

/// Parametric softmax backend. Weights are shared read-only across the
/// intersections of one episode; each agent keeps its own action RNG.
pub struct ParametricAgent {
    policy: Arc<ParametricPolicy>,
    rng: ChaCha12Rng,
    /// Take the argmax instead of sampling.
    pub greedy: bool,
    pub message_threshold: u32,
    steps: Vec<StepRecord>,
}

impl ParametricAgent {
    pub fn new(policy: Arc<ParametricPolicy>, seed: u64) -> Self {
        ParametricAgent {
            policy,
            rng: ChaCha12Rng::seed_from_u64(seed),
            greedy: false,
            message_threshold: MESSAGE_QUEUE_THRESHOLD,
            steps: Vec::new(),
        }
    }

    /// Recorded (features, action, log_prob) steps since the last take.
    pub fn take_steps(&mut self) -> Vec<StepRecord> {
        std::mem::take(&mut self.steps)
    }

    /// Heavy-traffic broadcast: the busiest protected approach above the
    /// threshold, phrased for the neighbors downstream of its through
    /// movement.
    fn heavy_traffic_message(obs: &Observation, threshold: u32) -> Option<String> {
        let mut best: Option<(u32, Approach)> = None;
        for &approach in &crate::net::APPROACHES {
            let total: u32 = obs
                .phases
                .iter()
                .flat_map(|p| p.lanes.iter())
                .filter(|l| l.approach == approach)
                .map(|l| l.early_queued)
                .sum();
            if total > threshold && best.map(|(b, _)| total > b).unwrap_or(true) {
                best = Some((total, approach));
            }
        }
        best.map(|(_, approach)| {
            format!(
                "Heavy {} traffic is approaching.",
                approach.through_bound_word()
            )
        })
    }
}

impl DecisionPolicy for ParametricAgent {
    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        let summary = summarize_inbox(ctx.inbox, ctx.emergencies);
        let features = featurize(ctx.observation, &summary);
        let (phase, log_prob) = if self.greedy {
            let p = self.policy.argmax(&features);
            (p, self.policy.log_prob(&features, p))
        } else {
            self.policy.sample(&features, &mut self.rng)
        };
        self.steps.push(StepRecord {
            features,
            action: phase,
            log_prob,
        });
        let outgoing = Self::heavy_traffic_message(ctx.observation, self.message_threshold);
        Decision {
            phase,
            outgoing_message: outgoing,
            log_prob: Some(log_prob),
        }
    }
}

/// External text policy over the wire. Renders the prompt, requests a
/// completion, parses it, and falls back to max-pressure on timeout or an
/// unparseable action (logging a protocol error).
pub struct TextWireAgent {
    client: TextPolicyClient,
    next_id: u64,
    id_prefix: String,
    pub protocol_errors: u64,
}

impl TextWireAgent {
    pub fn new(client: TextPolicyClient, id_prefix: &str) -> Self {
        TextWireAgent {
            client,
            next_id: 0,
            id_prefix: id_prefix.to_string(),
            protocol_errors: 0,
        }
    }
}

impl DecisionPolicy for TextWireAgent {
    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        let prompt = render_prompt(ctx.observation, ctx.incident, ctx.inbox);
        let id = format!("{}-{}", self.id_prefix, self.next_id);
        self.next_id += 1;
        match self.client.request(&id, &prompt.text()) {
            Ok(text) => {
                let parsed = parse_response(&text);
                match parsed.action {
                    Some(phase) => Decision {
                        phase,
                        outgoing_message: extract_message(&text),
                        log_prob: None,
                    },
                    None => {
                        self.protocol_errors += 1;
                        log::warn!("wire protocol error: unparseable action for {id}");
                        Decision::silent(max_pressure_next(ctx.observation, ctx.downstream))
                    }
                }
            }
            Err(e) => {
                self.protocol_errors += 1;
                log::warn!("wire protocol error for {id}: {e}");
                Decision::silent(max_pressure_next(ctx.observation, ctx.downstream))
            }
        }
    }
}

/// Serves the phase protecting a nearby emergency vehicle's movement, else
/// max-pressure. Right-turning emergencies get their approach's through
/// phase to clear the corner.
#[derive(Default)]
pub struct EmergencyPriorityAgent;

impl DecisionPolicy for EmergencyPriorityAgent {
    fn decide(&mut self, ctx: &DecisionContext) -> Decision {
        for &(approach, movement) in ctx.emergencies {
            let phase = Phase::protecting(approach, movement)
                .or_else(|| Phase::protecting(approach, Movement::Through));
            if let Some(phase) = phase {
                return Decision::silent(phase);
            }
        }
        Decision::silent(max_pressure_next(ctx.observation, ctx.downstream))
    }
}
