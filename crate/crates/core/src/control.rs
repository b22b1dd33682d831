//! Classical baseline controllers: FixedTime, MaxPressure, Random.

use crate::net::{Phase, PHASES};
use crate::sim::{MovementCounts, Observation, SignalState};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A fixed signal-timing plan: the four phases in cycle order, each held for
/// a green time that is a multiple of the 15 s decision cadence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedTimePlan {
    /// Every phase appears exactly once.
    pub cycle_order: [Phase; 4],
    /// Green seconds per phase; rounded up to whole decision periods.
    pub green_s: u32,
}

impl Default for FixedTimePlan {
    fn default() -> Self {
        FixedTimePlan {
            cycle_order: PHASES,
            green_s: crate::sim::GREEN_S,
        }
    }
}

impl FixedTimePlan {
    pub fn validate(&self) -> bool {
        PHASES.iter().all(|p| self.cycle_order.contains(p))
    }

    /// Number of consecutive decisions each phase is held for.
    pub fn holds(&self) -> u32 {
        self.green_s.div_ceil(crate::sim::GREEN_S).max(1)
    }
}

/// Next phase of the fixed cycle after the currently shown one, independent
/// of traffic.
pub fn fixed_time_next(plan: &FixedTimePlan, state: &SignalState) -> Phase {
    let pos = plan
        .cycle_order
        .iter()
        .position(|&p| p == state.current_phase)
        .expect("cycle order covers all phases");
    plan.cycle_order[(pos + 1) % 4]
}

/// Stateful fixed-time controller: a pure function of its decision index.
#[derive(Debug, Clone)]
pub struct FixedTimeController {
    plan: FixedTimePlan,
    step: u64,
}

impl FixedTimeController {
    pub fn new(plan: FixedTimePlan) -> Self {
        assert!(plan.validate(), "cycle order must cover all four phases");
        FixedTimeController { plan, step: 0 }
    }

    pub fn next(&mut self) -> Phase {
        let holds = self.plan.holds() as u64;
        let phase = self.plan.cycle_order[((self.step / holds) % 4) as usize];
        self.step += 1;
        phase
    }
}

/// Pressure of one phase: the sum over its protected movements of the
/// upstream queue (stop-line buffer plus the nearest segment) minus the
/// downstream stop-line queue on the receiving arm (zero at boundaries).
pub fn pressure(obs: &Observation, phase: Phase, downstream: &MovementCounts) -> i64 {
    let counts = obs.phase(phase);
    counts
        .lanes
        .iter()
        .map(|lane| {
            let upstream = lane.early_queued + lane.segments.first().copied().unwrap_or(0);
            let movement = phase.movements()[0].1;
            let down = downstream.get(lane.approach, movement);
            upstream as i64 - down as i64
        })
        .sum()
}

/// Phase with the highest pressure; ties break by the fixed phase order
/// ETWT < ELWL < NTST < NLSL.
pub fn max_pressure_next(obs: &Observation, downstream: &MovementCounts) -> Phase {
    let mut best = PHASES[0];
    let mut best_pressure = i64::MIN;
    for phase in PHASES {
        let p = pressure(obs, phase, downstream);
        if p > best_pressure {
            best = phase;
            best_pressure = p;
        }
    }
    best
}

/// Uniform random phase.
pub fn random_next<R: Rng + ?Sized>(rng: &mut R) -> Phase {
    PHASES[rng.random_range(0..4)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Approach, IntersectionId};
    use crate::sim::GREEN_S;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn obs_with(buffered: &[(Phase, Approach, u32)]) -> Observation {
        let mut obs = Observation::empty(IntersectionId::new(0, 0), 3);
        for &(phase, approach, count) in buffered {
            let counts = &mut obs.phases[phase.index()];
            let lane = counts
                .lanes
                .iter_mut()
                .find(|l| l.approach == approach)
                .unwrap();
            lane.early_queued = count;
        }
        obs
    }

    #[test]
    fn fixed_time_steps_through_the_cycle() {
        let plan = FixedTimePlan::default();
        let state = SignalState::new(Phase::ETWT, GREEN_S);
        assert_eq!(fixed_time_next(&plan, &state), Phase::ELWL);

        let mut ctl = FixedTimeController::new(plan);
        let seq: Vec<Phase> = (0..8).map(|_| ctl.next()).collect();
        assert_eq!(
            seq,
            vec![
                Phase::ETWT,
                Phase::ELWL,
                Phase::NTST,
                Phase::NLSL,
                Phase::ETWT,
                Phase::ELWL,
                Phase::NTST,
                Phase::NLSL,
            ]
        );
    }

    #[test]
    fn fixed_time_ignores_traffic() {
        // Decisions depend only on the step index, never on observations.
        let mut a = FixedTimeController::new(FixedTimePlan::default());
        let mut b = FixedTimeController::new(FixedTimePlan::default());
        let _heavy = obs_with(&[(Phase::NLSL, Approach::N, 99)]);
        for _ in 0..16 {
            assert_eq!(a.next(), b.next());
        }
    }

    #[test]
    fn longer_greens_hold_each_phase() {
        let mut ctl = FixedTimeController::new(FixedTimePlan {
            cycle_order: PHASES,
            green_s: 30,
        });
        let seq: Vec<Phase> = (0..4).map(|_| ctl.next()).collect();
        assert_eq!(seq, vec![Phase::ETWT, Phase::ETWT, Phase::ELWL, Phase::ELWL]);
    }

    #[test]
    fn pressure_of_empty_observation_is_zero() {
        let obs = Observation::empty(IntersectionId::new(0, 0), 3);
        let down = MovementCounts::default();
        for phase in PHASES {
            assert_eq!(pressure(&obs, phase, &down), 0);
        }
    }

    #[test]
    fn pressure_sums_upstream_queues() {
        let obs = obs_with(&[(Phase::ETWT, Approach::E, 3), (Phase::ETWT, Approach::W, 2)]);
        let down = MovementCounts::default();
        assert_eq!(pressure(&obs, Phase::ETWT, &down), 5);
        // Downstream queues subtract.
        let mut down = MovementCounts::default();
        down.set(Approach::E, crate::net::Movement::Through, 4);
        assert_eq!(pressure(&obs, Phase::ETWT, &down), 1);
    }

    #[test]
    fn pressure_counts_nearest_segment() {
        let mut obs = Observation::empty(IntersectionId::new(0, 0), 3);
        let lane = &mut obs.phases[Phase::NTST.index()].lanes[0];
        lane.early_queued = 2;
        lane.segments[0] = 3; // segment 1 counts toward pressure
        lane.segments[2] = 9; // segment 3 does not
        assert_eq!(pressure(&obs, Phase::NTST, &MovementCounts::default()), 5);
    }

    #[test]
    fn pressure_is_linear_in_queue_scaling() {
        let obs = obs_with(&[
            (Phase::ETWT, Approach::E, 3),
            (Phase::NTST, Approach::N, 1),
            (Phase::NLSL, Approach::S, 2),
        ]);
        let scaled = obs_with(&[
            (Phase::ETWT, Approach::E, 9),
            (Phase::NTST, Approach::N, 3),
            (Phase::NLSL, Approach::S, 6),
        ]);
        let down = MovementCounts::default();
        for phase in PHASES {
            assert_eq!(
                3 * pressure(&obs, phase, &down),
                pressure(&scaled, phase, &down)
            );
        }
    }

    #[test]
    fn max_pressure_picks_argmax_with_fixed_tie_break() {
        let obs = obs_with(&[(Phase::ETWT, Approach::E, 5), (Phase::ELWL, Approach::W, 1)]);
        let down = MovementCounts::default();
        assert_eq!(max_pressure_next(&obs, &down), Phase::ETWT);

        // All pressures equal: first phase in the fixed order wins.
        let empty = Observation::empty(IntersectionId::new(0, 0), 3);
        assert_eq!(max_pressure_next(&empty, &down), Phase::ETWT);
    }

    #[test]
    fn max_pressure_argmax_invariant_under_positive_scaling() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let down = MovementCounts::default();
        for _ in 0..200 {
            let mut obs = Observation::empty(IntersectionId::new(0, 0), 3);
            for pc in obs.phases.iter_mut() {
                for lane in pc.lanes.iter_mut() {
                    lane.early_queued = rng.random_range(0..10);
                    for s in lane.segments.iter_mut() {
                        *s = rng.random_range(0..10);
                    }
                }
            }
            let c = rng.random_range(2..5u32);
            let mut scaled = obs.clone();
            for pc in scaled.phases.iter_mut() {
                for lane in pc.lanes.iter_mut() {
                    lane.early_queued *= c;
                    for s in lane.segments.iter_mut() {
                        *s *= c;
                    }
                }
            }
            assert_eq!(
                max_pressure_next(&obs, &down),
                max_pressure_next(&scaled, &down)
            );
        }
    }

    #[test]
    fn max_pressure_serves_oversaturated_pair_until_relieved() {
        let down = MovementCounts::default();
        let mut queue = 20i64;
        let mut served_other = false;
        while queue >= 0 {
            let obs = obs_with(&[
                (Phase::ELWL, Approach::E, queue as u32),
                (Phase::NTST, Approach::N, 3),
            ]);
            if queue > 3 {
                assert_eq!(max_pressure_next(&obs, &down), Phase::ELWL);
            } else if queue < 3 {
                assert_eq!(max_pressure_next(&obs, &down), Phase::NTST);
                served_other = true;
            }
            queue -= 6; // roughly one green of discharge
        }
        assert!(served_other);
    }

    #[test]
    fn random_next_is_uniform_and_seed_stable() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut counts = [0u32; 4];
        for _ in 0..10_000 {
            counts[random_next(&mut rng).index()] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.25).abs() < 0.02, "frequency {freq}");
        }

        let a: Vec<Phase> = {
            let mut rng = ChaCha12Rng::seed_from_u64(7);
            (0..50).map(|_| random_next(&mut rng)).collect()
        };
        let b: Vec<Phase> = {
            let mut rng = ChaCha12Rng::seed_from_u64(7);
            (0..50).map(|_| random_next(&mut rng)).collect()
        };
        assert_eq!(a, b);
    }
}
