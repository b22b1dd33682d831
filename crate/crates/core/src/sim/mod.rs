//! Deterministic discrete-time queue-based traffic microsimulator.
//!
//! Time advances in one-second ticks. Vehicles traverse lane segments at
//! free-flow speed (10 m/s, one default-length segment per 10 ticks) when
//! the downstream segment has room, then join the lane's stop-line buffer.
//! During green, a buffered vehicle discharges across the intersection at
//! most once per two ticks per lane; right-turn lanes discharge under every
//! stage except all-red. Waiting time accrues only in stop-line buffers.
//! Everything is integer-clocked and iterated in fixed order, so a run is a
//! pure function of (network, arrival schedule, controller decisions).

mod events;
mod flow;
mod metrics;
mod signal;

pub use events::{parse_event_log, EventLog, RunEvent};
pub use flow::{spawn_flow, Arrival, FlowSpec};
pub use metrics::MetricsReport;
pub use signal::{SignalState, Stage, ALL_RED_S, GREEN_S, YELLOW_S};

use crate::error::SimError;
use crate::net::{
    parity_group, Approach, GridNetwork, IntersectionId, Movement, ParityGroup, Phase,
    APPROACHES, MOVEMENTS, PHASES,
};
use metrics::mean;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Free-flow speed in meters per second.
pub const FREE_FLOW_MPS: f64 = 10.0;
/// Effective vehicle length used for segment capacity, meters.
pub const VEHICLE_SPACING_M: f64 = 7.5;
/// A lane discharges at most one vehicle per this many ticks of green.
pub const DISCHARGE_PERIOD_TICKS: u32 = 2;

/// Simulator options.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub initial_phase: Phase,
    /// Insert the yellow/all-red transition even when a phase is reselected.
    pub always_transition: bool,
    /// Extra initial green granted to parity group two, staggering its
    /// decision instants behind group one's.
    pub group2_initial_offset_s: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            initial_phase: Phase::ETWT,
            always_transition: false,
            group2_initial_offset_s: 0,
        }
    }
}

/// A vehicle and its lifetime bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u32,
    /// Remaining route, indexed by `route_pos`: (intersection, movement).
    pub route: Vec<(IntersectionId, Movement)>,
    pub route_pos: usize,
    pub entry_time_s: u32,
    pub exit_time_s: Option<u32>,
    /// Completed whole seconds spent at speed zero in stop-line buffers.
    pub waiting_s: u32,
    pub is_emergency: bool,
    /// Tick at which the vehicle entered its current segment.
    segment_entered_at: u32,
    /// Tick at which the vehicle entered its current stop-line buffer.
    buffer_entered_at: Option<u32>,
}

impl Vehicle {
    /// Waiting seconds accrued so far, counting an unfinished buffer stay up
    /// to `now`.
    pub fn waiting_through(&self, now: u32) -> u32 {
        match self.buffer_entered_at {
            Some(t0) => self.waiting_s + now.saturating_sub(t0),
            None => self.waiting_s,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct LaneState {
    /// `segments[0]` is segment 1, nearest the stop line; vehicles enter at
    /// the last index.
    segments: Vec<VecDeque<u32>>,
    buffer: VecDeque<u32>,
    cooldown: u32,
    /// Vehicles that arrived at a boundary arm but found the entry segment
    /// full. Empty for interior arms.
    source: VecDeque<u32>,
}

#[derive(Debug, Clone)]
struct ArmState {
    /// Lanes by movement: through, left, right.
    lanes: [LaneState; 3],
}

#[derive(Debug, Clone)]
struct IntersectionState {
    signal: SignalState,
    /// Incoming arms in [`APPROACHES`] order.
    arms: [ArmState; 4],
}

fn approach_index(a: Approach) -> usize {
    match a {
        Approach::N => 0,
        Approach::S => 1,
        Approach::E => 2,
        Approach::W => 3,
    }
}

fn movement_index(m: Movement) -> usize {
    match m {
        Movement::Through => 0,
        Movement::Left => 1,
        Movement::Right => 2,
    }
}

/// Per-approach, per-movement vehicle counts (used for downstream queues).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MovementCounts(pub [[u32; 3]; 4]);

impl MovementCounts {
    pub fn get(&self, approach: Approach, movement: Movement) -> u32 {
        self.0[approach_index(approach)][movement_index(movement)]
    }

    pub fn set(&mut self, approach: Approach, movement: Movement, value: u32) {
        self.0[approach_index(approach)][movement_index(movement)] = value;
    }
}

/// Counts for one protected lane of a phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApproachCounts {
    pub approach: Approach,
    pub early_queued: u32,
    /// `segments[0]` is segment 1, nearest the stop line.
    pub segments: Vec<u32>,
}

/// Counts for the two protected lanes of one phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCounts {
    pub phase: Phase,
    pub lanes: [ApproachCounts; 2],
}

impl PhaseCounts {
    pub fn early_total(&self) -> u32 {
        self.lanes.iter().map(|l| l.early_queued).sum()
    }

    pub fn segment_total(&self, segment: usize) -> u32 {
        self.lanes.iter().map(|l| l.segments[segment]).sum()
    }
}

/// Structured traffic observation of one intersection: per phase, per
/// protected approach, the early-queued (stop-line buffered) count and the
/// per-segment counts. Right-turn lanes are never phase-gated and their
/// buffered counts are reported separately.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub intersection: IntersectionId,
    pub phases: [PhaseCounts; 4],
    /// Right-turn buffered counts in [`APPROACHES`] order.
    pub right_turn_queued: [u32; 4],
}

impl Observation {
    /// An all-zero observation, useful as a rendering/test fixture.
    pub fn empty(intersection: IntersectionId, segment_count: usize) -> Self {
        let phases = PHASES.map(|phase| PhaseCounts {
            phase,
            lanes: phase.movements().map(|(approach, _)| ApproachCounts {
                approach,
                early_queued: 0,
                segments: vec![0; segment_count],
            }),
        });
        Observation {
            intersection,
            phases,
            right_turn_queued: [0; 4],
        }
    }

    pub fn segment_count(&self) -> usize {
        self.phases[0].lanes[0].segments.len()
    }

    /// Total buffered vehicles across protected and right-turn lanes.
    pub fn total_buffered(&self) -> u32 {
        self.phases.iter().map(|p| p.early_total()).sum::<u32>()
            + self.right_turn_queued.iter().sum::<u32>()
    }

    pub fn phase(&self, phase: Phase) -> &PhaseCounts {
        &self.phases[phase.index()]
    }
}

/// The simulator. Single-threaded; independent instances may run in
/// parallel.
pub struct Sim {
    network: GridNetwork,
    config: SimConfig,
    time_s: u32,
    vehicles: Vec<Vehicle>,
    intersections: Vec<IntersectionState>,
    schedule: Vec<Arrival>,
    next_arrival: usize,
    ticks_per_segment: u32,
    segment_capacity: u32,
    // metric accumulators
    spawned: u32,
    entered: u32,
    exited: u32,
    at_source: u32,
    queue_tick_sum: u64,
    max_queue: u32,
}

impl Sim {
    pub fn new(network: GridNetwork, schedule: Vec<Arrival>, config: SimConfig) -> Self {
        debug_assert!(schedule.windows(2).all(|w| w[0].time_s <= w[1].time_s));
        let seg_len = network.segment_length_m();
        let ticks_per_segment = (seg_len / FREE_FLOW_MPS).round().max(1.0) as u32;
        let segment_capacity = ((seg_len / VEHICLE_SPACING_M).floor() as u32).max(1);
        let lane = LaneState {
            segments: vec![VecDeque::new(); network.segment_count() as usize],
            ..LaneState::default()
        };
        let intersections = network
            .intersections()
            .map(|id| {
                let extra = match parity_group(id) {
                    ParityGroup::One => 0,
                    ParityGroup::Two => config.group2_initial_offset_s,
                };
                IntersectionState {
                    signal: SignalState::new(config.initial_phase, GREEN_S + extra),
                    arms: std::array::from_fn(|_| ArmState {
                        lanes: std::array::from_fn(|_| lane.clone()),
                    }),
                }
            })
            .collect();
        Sim {
            network,
            config,
            time_s: 0,
            vehicles: Vec::new(),
            intersections,
            schedule,
            next_arrival: 0,
            ticks_per_segment,
            segment_capacity,
            spawned: 0,
            entered: 0,
            exited: 0,
            at_source: 0,
            queue_tick_sum: 0,
            max_queue: 0,
        }
    }

    pub fn network(&self) -> &GridNetwork {
        &self.network
    }

    pub fn time_s(&self) -> u32 {
        self.time_s
    }

    /// Segment capacity in vehicles (also the stop-line buffer capacity).
    pub fn segment_capacity(&self) -> u32 {
        self.segment_capacity
    }

    fn index_of(&self, id: IntersectionId) -> usize {
        id.row as usize * self.network.cols() as usize + id.col as usize
    }

    fn state(&self, id: IntersectionId) -> &IntersectionState {
        &self.intersections[self.index_of(id)]
    }

    fn lane(&self, id: IntersectionId, approach: Approach, movement: Movement) -> &LaneState {
        &self.state(id).arms[approach_index(approach)].lanes[movement_index(movement)]
    }

    fn lane_mut(
        &mut self,
        id: IntersectionId,
        approach: Approach,
        movement: Movement,
    ) -> &mut LaneState {
        let idx = self.index_of(id);
        &mut self.intersections[idx].arms[approach_index(approach)].lanes[movement_index(movement)]
    }

    /// Intersections whose green just expired, in id order.
    pub fn pending_decisions(&self) -> Vec<IntersectionId> {
        self.network
            .intersections()
            .filter(|&id| self.state(id).signal.decision_pending())
            .collect()
    }

    pub fn signal(&self, id: IntersectionId) -> &SignalState {
        &self.state(id).signal
    }

    /// Apply a controller decision. Must be called exactly at a decision
    /// instant (green expiry) of `intersection`.
    pub fn set_phase(&mut self, intersection: IntersectionId, phase: Phase) -> Result<(), SimError> {
        if !self.network.contains(intersection) {
            return Err(SimError::UnknownIntersection {
                row: intersection.row,
                col: intersection.col,
            });
        }
        let always = self.config.always_transition;
        let idx = self.index_of(intersection);
        let signal = &mut self.intersections[idx].signal;
        if !signal.decision_pending() {
            return Err(SimError::NotAtDecisionInstant {
                row: intersection.row,
                col: intersection.col,
            });
        }
        signal.apply_decision(phase, always);
        Ok(())
    }

    /// Advance the simulation by one second.
    ///
    /// # Panics
    ///
    /// Panics if any intersection still has an unanswered decision instant;
    /// drivers must service [`Sim::pending_decisions`] first.
    pub fn tick(&mut self) {
        assert!(
            self.pending_decisions().is_empty(),
            "tick() called with unanswered decision instants"
        );
        let now = self.time_s + 1;
        self.spawn_due_arrivals(now);
        self.discharge(now);
        self.advance_segments(now);
        for state in &mut self.intersections {
            state.signal.count_down();
        }
        self.sample_queues();
        self.time_s = now;
    }

    fn spawn_due_arrivals(&mut self, now: u32) {
        while self.next_arrival < self.schedule.len()
            && self.schedule[self.next_arrival].time_s < now
        {
            let arrival = self.schedule[self.next_arrival].clone();
            self.next_arrival += 1;
            let id = self.vehicles.len() as u32;
            let movement = arrival.route[0].1;
            self.vehicles.push(Vehicle {
                id,
                route: arrival.route,
                route_pos: 0,
                entry_time_s: arrival.time_s,
                exit_time_s: None,
                waiting_s: 0,
                is_emergency: arrival.is_emergency,
                segment_entered_at: 0,
                buffer_entered_at: None,
            });
            self.spawned += 1;
            self.at_source += 1;
            self.lane_mut(arrival.entry, arrival.approach, movement)
                .source
                .push_back(id);
        }
        // Drain source queues onto entry segments while there is room.
        let capacity = self.segment_capacity as usize;
        for idx in 0..self.intersections.len() {
            for arm in 0..4 {
                for lane_idx in 0..3 {
                    let lane = &mut self.intersections[idx].arms[arm].lanes[lane_idx];
                    let last = lane.segments.len() - 1;
                    while !lane.source.is_empty() && lane.segments[last].len() < capacity {
                        let vid = lane.source.pop_front().unwrap();
                        lane.segments[last].push_back(vid);
                        self.vehicles[vid as usize].segment_entered_at = now - 1;
                        self.entered += 1;
                        self.at_source -= 1;
                    }
                }
            }
        }
    }

    fn discharge(&mut self, now: u32) {
        let ids: Vec<IntersectionId> = self.network.intersections().collect();
        for id in ids {
            let idx = self.index_of(id);
            let (stage, phase) = {
                let s = &self.intersections[idx].signal;
                (s.stage, s.current_phase)
            };
            for &approach in &APPROACHES {
                for &movement in &MOVEMENTS {
                    let lane = &mut self.intersections[idx].arms[approach_index(approach)].lanes
                        [movement_index(movement)];
                    lane.cooldown = lane.cooldown.saturating_sub(1);
                    let allowed = match movement {
                        Movement::Right => stage != Stage::AllRed,
                        _ => {
                            stage == Stage::Green
                                && phase.movements().contains(&(approach, movement))
                        }
                    };
                    if !allowed || lane.cooldown != 0 || lane.buffer.is_empty() {
                        continue;
                    }
                    let vid = *lane.buffer.front().unwrap();
                    let route_pos = self.vehicles[vid as usize].route_pos;
                    debug_assert_eq!(self.vehicles[vid as usize].route[route_pos], (id, movement));
                    match self.network.next_hop(id, approach, movement) {
                        None => {
                            // Crosses onto a boundary exit arm and leaves.
                            let lane = &mut self.intersections[idx].arms
                                [approach_index(approach)]
                            .lanes[movement_index(movement)];
                            lane.buffer.pop_front();
                            lane.cooldown = DISCHARGE_PERIOD_TICKS;
                            let v = &mut self.vehicles[vid as usize];
                            if let Some(t0) = v.buffer_entered_at.take() {
                                v.waiting_s += (now - 1).saturating_sub(t0);
                            }
                            v.exit_time_s = Some(now);
                            self.exited += 1;
                        }
                        Some((next_id, next_approach)) => {
                            let next_movement =
                                self.vehicles[vid as usize].route[route_pos + 1].1;
                            let next_idx = self.index_of(next_id);
                            let target = &mut self.intersections[next_idx].arms
                                [approach_index(next_approach)]
                            .lanes[movement_index(next_movement)];
                            let last = target.segments.len() - 1;
                            if target.segments[last].len() >= self.segment_capacity as usize {
                                continue; // downstream entry segment full
                            }
                            target.segments[last].push_back(vid);
                            let lane = &mut self.intersections[idx].arms
                                [approach_index(approach)]
                            .lanes[movement_index(movement)];
                            lane.buffer.pop_front();
                            lane.cooldown = DISCHARGE_PERIOD_TICKS;
                            let v = &mut self.vehicles[vid as usize];
                            if let Some(t0) = v.buffer_entered_at.take() {
                                v.waiting_s += (now - 1).saturating_sub(t0);
                            }
                            v.route_pos += 1;
                            v.segment_entered_at = now;
                        }
                    }
                }
            }
        }
    }

    fn advance_segments(&mut self, now: u32) {
        let capacity = self.segment_capacity as usize;
        let tps = self.ticks_per_segment;
        for idx in 0..self.intersections.len() {
            for arm in 0..4 {
                for lane_idx in 0..3 {
                    let lane = &mut self.intersections[idx].arms[arm].lanes[lane_idx];
                    // Segment 1 feeds the stop-line buffer (bounded like a
                    // segment), then each segment feeds the one ahead of it.
                    for seg in 0..lane.segments.len() {
                        loop {
                            let ready = match lane.segments[seg].front() {
                                Some(&vid) => {
                                    now - self.vehicles[vid as usize].segment_entered_at >= tps
                                }
                                None => false,
                            };
                            if !ready {
                                break;
                            }
                            let room = if seg == 0 {
                                lane.buffer.len() < capacity
                            } else {
                                lane.segments[seg - 1].len() < capacity
                            };
                            if !room {
                                break;
                            }
                            let vid = lane.segments[seg].pop_front().unwrap();
                            if seg == 0 {
                                lane.buffer.push_back(vid);
                                self.vehicles[vid as usize].buffer_entered_at = Some(now);
                            } else {
                                lane.segments[seg - 1].push_back(vid);
                                self.vehicles[vid as usize].segment_entered_at = now;
                            }
                        }
                    }
                }
            }
        }
    }

    fn sample_queues(&mut self) {
        for state in &self.intersections {
            let buffered: u32 = state
                .arms
                .iter()
                .flat_map(|a| a.lanes.iter())
                .map(|l| l.buffer.len() as u32)
                .sum();
            self.queue_tick_sum += buffered as u64;
            self.max_queue = self.max_queue.max(buffered);
        }
    }

    /// Structured observation of one intersection.
    ///
    /// The intersection must exist; this is a driver contract, not a runtime
    /// condition.
    pub fn observe(&self, intersection: IntersectionId) -> Observation {
        assert!(
            self.network.contains(intersection),
            "observe: unknown intersection {intersection}"
        );
        let phases = PHASES.map(|phase| PhaseCounts {
            phase,
            lanes: phase.movements().map(|(approach, movement)| {
                let lane = self.lane(intersection, approach, movement);
                ApproachCounts {
                    approach,
                    early_queued: lane.buffer.len() as u32,
                    segments: lane.segments.iter().map(|s| s.len() as u32).collect(),
                }
            }),
        });
        let right_turn_queued = APPROACHES.map(|approach| {
            self.lane(intersection, approach, Movement::Right).buffer.len() as u32
        });
        Observation {
            intersection,
            phases,
            right_turn_queued,
        }
    }

    /// Downstream stop-line queue for every protected movement: the total
    /// buffered count on the receiving arm of the adjacent intersection, or
    /// zero where the movement exits the grid.
    pub fn downstream_queues(&self, intersection: IntersectionId) -> MovementCounts {
        let mut counts = MovementCounts::default();
        for phase in PHASES {
            for (approach, movement) in phase.movements() {
                let value = match self.network.next_hop(intersection, approach, movement) {
                    Some((next, next_approach)) => self.state(next).arms
                        [approach_index(next_approach)]
                    .lanes
                    .iter()
                    .map(|l| l.buffer.len() as u32)
                    .sum(),
                    None => 0,
                };
                counts.set(approach, movement, value);
            }
        }
        counts
    }

    /// Total stop-line-buffered vehicles at one intersection (all lanes,
    /// right turns included).
    pub fn total_buffered(&self, intersection: IntersectionId) -> u32 {
        self.state(intersection)
            .arms
            .iter()
            .flat_map(|a| a.lanes.iter())
            .map(|l| l.buffer.len() as u32)
            .sum()
    }

    /// Emergency vehicles within two segments of the stop line (or already
    /// buffered) on any incoming arm, as (approach, movement-at-this-
    /// intersection) pairs in scan order.
    pub fn emergencies_near(&self, intersection: IntersectionId) -> Vec<(Approach, Movement)> {
        let mut out = Vec::new();
        for &approach in &APPROACHES {
            for &movement in &MOVEMENTS {
                let lane = self.lane(intersection, approach, movement);
                let near = lane
                    .buffer
                    .iter()
                    .chain(lane.segments.iter().take(2).flatten());
                for &vid in near {
                    if self.vehicles[vid as usize].is_emergency {
                        out.push((approach, movement));
                        break;
                    }
                }
            }
        }
        out
    }

    /// Metrics over everything spawned so far, censoring unfinished
    /// vehicles at the current time.
    pub fn metrics(&self) -> MetricsReport {
        let now = self.time_s;
        let spawned = || self.vehicles.iter();
        let travel =
            |v: &Vehicle| (v.exit_time_s.unwrap_or(now).saturating_sub(v.entry_time_s)) as f64;
        let att_s = mean(spawned().map(travel));
        let awt_s = mean(spawned().map(|v| v.waiting_through(now) as f64));
        let aett_s = mean(spawned().filter(|v| v.is_emergency).map(travel));
        let aewt_s = mean(
            spawned()
                .filter(|v| v.is_emergency)
                .map(|v| v.waiting_through(now) as f64),
        );
        let avg_queue = if now == 0 {
            0.0
        } else {
            self.queue_tick_sum as f64 / (now as u64 * self.intersections.len() as u64) as f64
        };
        MetricsReport {
            att_s,
            awt_s,
            aett_s,
            aewt_s,
            avg_queue,
            max_queue: self.max_queue,
            vehicles_entered: self.entered,
            vehicles_exited: self.exited,
        }
    }

    /// (spawned, at-source, in-network, exited) counts for conservation
    /// checks.
    pub fn population(&self) -> (u32, u32, u32, u32) {
        (
            self.spawned,
            self.at_source,
            self.entered - self.exited,
            self.exited,
        )
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    #[cfg(test)]
    pub(crate) fn test_inject_buffered(
        &mut self,
        intersection: IntersectionId,
        approach: Approach,
        movement: Movement,
        count: u32,
        is_emergency: bool,
    ) {
        for _ in 0..count {
            let id = self.vehicles.len() as u32;
            let now = self.time_s;
            self.vehicles.push(Vehicle {
                id,
                route: vec![(intersection, movement)],
                route_pos: 0,
                entry_time_s: now,
                exit_time_s: None,
                waiting_s: 0,
                is_emergency,
                segment_entered_at: now,
                buffer_entered_at: Some(now),
            });
            self.spawned += 1;
            self.entered += 1;
            self.lane_mut(intersection, approach, movement)
                .buffer
                .push_back(id);
        }
    }
}
