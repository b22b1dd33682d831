//! Fixed-dimension featurization of observations for the parametric policy.

use super::AgentMessage;
use crate::net::{Approach, Movement, APPROACHES, PHASES};
use crate::sim::Observation;

/// Slots appended for the inbox/emergency summary: four heavy-traffic
/// indicators and four emergency indicators, one per arrival approach in
/// [`APPROACHES`] order.
pub const INBOX_SLOTS: usize = 8;

/// Count used to normalize raw queue counts (the default segment capacity).
pub const NORMALIZATION_CAPACITY: f64 = 13.0;

/// Feature dimension for a given per-lane segment count: per phase (4), per
/// approach slot (4), the early-queued count plus one count per segment,
/// each emitted raw and capacity-normalized, plus the inbox slots. For the
/// default 3 segments this is 4*4*4*2 + 8 = 136.
pub fn feature_dim(segment_count: usize) -> usize {
    4 * 4 * (1 + segment_count) * 2 + INBOX_SLOTS
}

/// Map an observation and an inbox summary to a feature vector of
/// [`feature_dim`] entries. Approach slots that do not participate in a
/// phase stay zero, so the empty observation maps to the zero vector (inbox
/// slots aside).
pub fn featurize(obs: &Observation, inbox_summary: &[f64; INBOX_SLOTS]) -> Vec<f64> {
    let segs = obs.segment_count();
    let mut out = Vec::with_capacity(feature_dim(segs));
    for phase in PHASES {
        let counts = obs.phase(phase);
        for approach in APPROACHES {
            let lane = counts.lanes.iter().find(|l| l.approach == approach);
            let mut values = Vec::with_capacity(1 + segs);
            match lane {
                Some(l) => {
                    values.push(l.early_queued as f64);
                    values.extend(l.segments.iter().map(|&c| c as f64));
                }
                None => values.resize(1 + segs, 0.0),
            }
            for &v in &values {
                out.push(v);
                out.push(v / NORMALIZATION_CAPACITY);
            }
        }
    }
    out.extend_from_slice(inbox_summary);
    out
}

/// Arrival approach implied by a "<dir>bound" keyword: southbound traffic
/// reaches the recipient on its northern arm, and so on.
fn bound_word_arrival(word: &str) -> Option<Approach> {
    match word {
        "southbound" => Some(Approach::N),
        "northbound" => Some(Approach::S),
        "westbound" => Some(Approach::E),
        "eastbound" => Some(Approach::W),
        _ => None,
    }
}

fn approach_slot(a: Approach) -> usize {
    APPROACHES.iter().position(|&x| x == a).unwrap()
}

/// Build the inbox summary from neighbor messages and locally detected
/// emergency vehicles.
pub fn summarize_inbox(
    inbox: &[AgentMessage],
    emergencies: &[(Approach, Movement)],
) -> [f64; INBOX_SLOTS] {
    let mut slots = [0.0; INBOX_SLOTS];
    for m in inbox {
        let lower = m.body.to_ascii_lowercase();
        for word in ["southbound", "northbound", "westbound", "eastbound"] {
            if lower.contains(word) {
                if let Some(a) = bound_word_arrival(word) {
                    slots[approach_slot(a)] = 1.0;
                }
            }
        }
    }
    for &(approach, _) in emergencies {
        slots[4 + approach_slot(approach)] = 1.0;
    }
    slots
}
