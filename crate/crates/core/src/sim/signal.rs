//! Signal-head state machine: 15 s green, 3 s yellow, 2 s all-red.

use crate::net::Phase;
use serde::{Deserialize, Serialize};

/// Green duration in seconds.
pub const GREEN_S: u32 = 15;
/// Yellow transition duration in seconds.
pub const YELLOW_S: u32 = 3;
/// All-red clearance duration in seconds.
pub const ALL_RED_S: u32 = 2;

/// Stage of the signal head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Green,
    Yellow,
    AllRed,
}

/// Per-intersection signal state.
///
/// A decision instant is a green stage whose remaining time has reached
/// zero; the driver must then select the next phase before the simulation
/// can advance. Reselecting the current phase restarts green immediately;
/// selecting a different phase inserts the yellow and all-red transition
/// first, so consecutive decision instants are 15 s apart without a change
/// and 20 s apart with one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalState {
    pub current_phase: Phase,
    pub stage: Stage,
    pub stage_remaining: u32,
    /// Phase that green will show after the in-progress transition.
    pub pending_phase: Option<Phase>,
}

impl SignalState {
    /// Fresh green for `phase` with `green_s` seconds remaining.
    pub fn new(phase: Phase, green_s: u32) -> Self {
        SignalState {
            current_phase: phase,
            stage: Stage::Green,
            stage_remaining: green_s,
            pending_phase: None,
        }
    }

    /// True when the controller must pick the next phase.
    pub fn decision_pending(&self) -> bool {
        self.stage == Stage::Green && self.stage_remaining == 0
    }

    /// Apply a controller decision at a decision instant.
    ///
    /// `always_transition` forces the yellow/all-red transition even when the
    /// phase is unchanged.
    pub fn apply_decision(&mut self, phase: Phase, always_transition: bool) {
        debug_assert!(self.decision_pending());
        if phase == self.current_phase && !always_transition {
            self.stage_remaining = GREEN_S;
        } else {
            self.stage = Stage::Yellow;
            self.stage_remaining = YELLOW_S;
            self.pending_phase = Some(phase);
        }
    }

    /// Advance the head by one second. Called at the end of every tick.
    pub fn count_down(&mut self) {
        if self.stage_remaining > 0 {
            self.stage_remaining -= 1;
        }
        if self.stage_remaining == 0 {
            match self.stage {
                Stage::Yellow => {
                    self.stage = Stage::AllRed;
                    self.stage_remaining = ALL_RED_S;
                }
                Stage::AllRed => {
                    self.stage = Stage::Green;
                    self.stage_remaining = GREEN_S;
                    if let Some(next) = self.pending_phase.take() {
                        self.current_phase = next;
                    }
                }
                // Remaining green time stays at zero until the driver
                // applies a decision.
                Stage::Green => {}
            }
        }
    }
}
