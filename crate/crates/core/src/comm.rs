//! Asynchronous communication network: parity-partitioned half-step
//! scheduling with one-half-step message latency and a bounded delivery
//! radius.
//!
//! Each decision step splits into two half-steps. Group-one agents act
//! first, reading messages that group two emitted in the previous step and
//! broadcasting to their group-two neighbors within the delivery radius;
//! the environment then advances by the configured offset and group two
//! acts symmetrically, emitting the buffer consumed at the next step.

use crate::agent::AgentMessage;
use crate::net::{parity_group, GridNetwork, IntersectionId, ParityGroup, ParityPartition};
use std::collections::BTreeMap;

/// Delivery radius of Algorithm-style neighbor messaging, meters. Every
/// grid neighbor qualifies at 300 m spacing; the filter binds on longer
/// synthetic links.
pub const MESSAGE_RADIUS_M: f64 = 2000.0;

/// Default world-time offset between the two half-steps: roughly half of
/// the 15 s decision interval, rounded to whole ticks; the remainder runs
/// after the second half-step.
pub const DEFAULT_HALF_STEP_OFFSET_S: u32 = 7;

/// Scheduling parameters of the communication network.
#[derive(Debug, Clone)]
pub struct CommConfig {
    pub half_step_offset_s: u32,
    pub decision_period_s: u32,
    pub radius_m: f64,
}

impl Default for CommConfig {
    fn default() -> Self {
        CommConfig {
            half_step_offset_s: DEFAULT_HALF_STEP_OFFSET_S,
            decision_period_s: crate::sim::GREEN_S,
            radius_m: MESSAGE_RADIUS_M,
        }
    }
}

/// Pending messages keyed by recipient. Inboxes are cleared on read.
#[derive(Debug, Clone, Default)]
pub struct MessageBuffer {
    inboxes: BTreeMap<IntersectionId, Vec<AgentMessage>>,
}

impl MessageBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, message: AgentMessage) {
        self.inboxes
            .entry(message.recipient)
            .or_default()
            .push(message);
    }

    /// Remove and return the recipient's inbox.
    pub fn take(&mut self, recipient: IntersectionId) -> Vec<AgentMessage> {
        self.inboxes.remove(&recipient).unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.inboxes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.inboxes.values().map(|v| v.len()).sum()
    }

    pub fn recipients(&self) -> impl Iterator<Item = IntersectionId> + '_ {
        self.inboxes.keys().copied()
    }
}

/// Append `body` from `sender` for every candidate recipient that passes
/// the parity and radius filters. Returns the recipients actually served.
///
/// Candidates addressed within the sender's own parity group are a protocol
/// violation: they are dropped with a logged warning. Candidates beyond the
/// radius are silently filtered.
pub fn deliver(
    buffer: &mut MessageBuffer,
    sender: IntersectionId,
    body: &str,
    candidates: &[IntersectionId],
    network: &GridNetwork,
    radius_m: f64,
    issued_half_step: u64,
) -> Vec<IntersectionId> {
    let mut delivered = Vec::new();
    for &recipient in candidates {
        if recipient == sender {
            log::warn!("comm: dropping self-addressed message from {sender}");
            continue;
        }
        if parity_group(recipient) == parity_group(sender) {
            log::warn!("comm: dropping same-parity message {sender} -> {recipient}");
            continue;
        }
        let distance = match network.neighbor_distance(sender, recipient) {
            Ok(d) => d,
            Err(_) => {
                log::warn!("comm: dropping message to unknown intersection {recipient}");
                continue;
            }
        };
        if distance > radius_m {
            continue;
        }
        buffer.add(AgentMessage::new(sender, recipient, body, issued_half_step));
        delivered.push(recipient);
    }
    delivered
}

/// One agent activation inside a decision step.
pub trait CommEnv {
    /// Read the inbox, decide, apply the action, and optionally return an
    /// outgoing broadcast body. `half_step` is the global half-step index.
    fn act(
        &mut self,
        agent: IntersectionId,
        inbox: Vec<AgentMessage>,
        half_step: u64,
    ) -> Option<String>;

    /// Advance world time between half-steps.
    fn advance(&mut self, seconds: u32);

    fn network(&self) -> &GridNetwork;
}

/// Run one full decision step of the asynchronous network.
///
/// `buffer` must hold only messages addressed to group one (emitted by
/// group two in the previous step); anything else is dropped with a logged
/// violation. Returns the buffer for the next step, holding group two's
/// emissions addressed to group one.
pub fn run_decision_step<E: CommEnv>(
    env: &mut E,
    partition: &ParityPartition,
    mut buffer: MessageBuffer,
    cfg: &CommConfig,
    step: u64,
) -> MessageBuffer {
    let mut half = |env: &mut E,
                    group: ParityGroup,
                    incoming: &mut MessageBuffer,
                    half_step: u64|
     -> MessageBuffer {
        let mut outgoing = MessageBuffer::new();
        for agent in partition.members(group) {
            let inbox = incoming.take(agent);
            if let Some(body) = env.act(agent, inbox, half_step) {
                let candidates: Vec<IntersectionId> = env
                    .network()
                    .neighbors(agent)
                    .into_iter()
                    .map(|(_, n)| n)
                    .collect();
                deliver(
                    &mut outgoing,
                    agent,
                    &body,
                    &candidates,
                    env.network(),
                    cfg.radius_m,
                    half_step,
                );
            }
        }
        for leftover in incoming.recipients().collect::<Vec<_>>() {
            let dropped = incoming.take(leftover);
            log::warn!(
                "comm: {} message(s) addressed to {leftover} outside the acting group, dropped",
                dropped.len()
            );
        }
        outgoing
    };

    let mut first_out = half(env, ParityGroup::One, &mut buffer, 2 * step);
    debug_assert!(buffer.is_empty());
    env.advance(cfg.half_step_offset_s);
    let second_out = half(env, ParityGroup::Two, &mut first_out, 2 * step + 1);
    debug_assert!(first_out.is_empty());
    env.advance(cfg.decision_period_s.saturating_sub(cfg.half_step_offset_s));
    second_out
}
