//! Random traffic demand: Poisson arrivals on boundary arms with
//! turn-probability routing, reproducible from a single seed.

use crate::error::SimError;
use crate::net::{Approach, GridNetwork, IntersectionId, Movement};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

/// Demand description for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "FlowDoc")]
pub struct FlowSpec {
    /// Total arrival rate over all boundary arms, vehicles per hour.
    pub total_rate_vph: f64,
    pub seed: u64,
    /// (through, left, right) routing probabilities; must sum to 1.
    pub turn_probabilities: [f64; 3],
    /// Probability that a spawned vehicle is an emergency vehicle.
    pub emergency_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowDoc {
    total_rate_vph: f64,
    seed: u64,
    turn_probabilities: [f64; 3],
    emergency_fraction: f64,
}

impl From<FlowSpec> for FlowDoc {
    fn from(s: FlowSpec) -> Self {
        FlowDoc {
            total_rate_vph: s.total_rate_vph,
            seed: s.seed,
            turn_probabilities: s.turn_probabilities,
            emergency_fraction: s.emergency_fraction,
        }
    }
}

impl<'de> Deserialize<'de> for FlowSpec {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let doc = FlowDoc::deserialize(deserializer)?;
        let spec = FlowSpec {
            total_rate_vph: doc.total_rate_vph,
            seed: doc.seed,
            turn_probabilities: doc.turn_probabilities,
            emergency_fraction: doc.emergency_fraction,
        };
        spec.validate().map_err(serde::de::Error::custom)?;
        Ok(spec)
    }
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec {
            total_rate_vph: 4000.0,
            seed: 0,
            turn_probabilities: [0.6, 0.2, 0.2],
            emergency_fraction: 0.0,
        }
    }
}

impl FlowSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.total_rate_vph >= 0.0) || !self.total_rate_vph.is_finite() {
            return Err(SimError::InvalidSpec(format!(
                "total_rate_vph must be nonnegative, got {}",
                self.total_rate_vph
            )));
        }
        let sum: f64 = self.turn_probabilities.iter().sum();
        if self.turn_probabilities.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(SimError::InvalidSpec(format!(
                "turn_probabilities must be a simplex, got {:?}",
                self.turn_probabilities
            )));
        }
        if !(0.0..=1.0).contains(&self.emergency_fraction) {
            return Err(SimError::InvalidSpec(format!(
                "emergency_fraction must be in [0, 1], got {}",
                self.emergency_fraction
            )));
        }
        Ok(())
    }

    /// Copy of this spec with the given seed.
    pub fn with_seed(&self, seed: u64) -> FlowSpec {
        FlowSpec { seed, ..self.clone() }
    }

    /// Copy of this spec with the given emergency fraction.
    pub fn with_emergency_fraction(&self, fraction: f64) -> FlowSpec {
        FlowSpec {
            emergency_fraction: fraction,
            ..self.clone()
        }
    }
}

/// One scheduled vehicle arrival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    /// Whole second at which the vehicle reaches the boundary arm.
    pub time_s: u32,
    pub entry: IntersectionId,
    pub approach: Approach,
    /// (intersection, movement) hops until the route leaves the grid.
    pub route: Vec<(IntersectionId, Movement)>,
    pub is_emergency: bool,
}

fn draw_movement(rng: &mut ChaCha12Rng, probs: &[f64; 3]) -> Movement {
    let x: f64 = rng.random();
    if x < probs[0] {
        Movement::Through
    } else if x < probs[0] + probs[1] {
        Movement::Left
    } else {
        Movement::Right
    }
}

/// Extend a route from an entry arm until it exits the grid.
fn draw_route(
    rng: &mut ChaCha12Rng,
    network: &GridNetwork,
    entry: IntersectionId,
    approach: Approach,
    probs: &[f64; 3],
) -> Vec<(IntersectionId, Movement)> {
    let mut route = Vec::new();
    let mut here = entry;
    let mut arrive_on = approach;
    loop {
        let movement = draw_movement(rng, probs);
        route.push((here, movement));
        match network.next_hop(here, arrive_on, movement) {
            Some((next, next_approach)) => {
                here = next;
                arrive_on = next_approach;
            }
            None => return route,
        }
    }
}

/// Generate the arrival schedule for one run.
///
/// The total rate is split evenly over all boundary entry arms, each arm
/// drawing an independent Poisson process from a seed derived from
/// `spec.seed`. Routes follow the turn probabilities until they exit the
/// grid. The schedule is deterministic given the spec and returned sorted by
/// arrival time.
pub fn spawn_flow(spec: &FlowSpec, network: &GridNetwork, horizon_s: u32) -> Vec<Arrival> {
    spec.validate().expect("invalid flow spec");
    let arms = network.entry_arms();
    if horizon_s == 0 || spec.total_rate_vph <= 0.0 || arms.is_empty() {
        return Vec::new();
    }
    let per_arm_rate_per_s = spec.total_rate_vph / 3600.0 / arms.len() as f64;
    let exp = Exp::new(per_arm_rate_per_s).expect("positive rate");

    let mut master = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut arrivals = Vec::new();
    for (entry, approach) in arms {
        let mut rng = ChaCha12Rng::seed_from_u64(master.random());
        let mut t = 0.0_f64;
        loop {
            t += exp.sample(&mut rng);
            if t >= horizon_s as f64 {
                break;
            }
            let route = draw_route(&mut rng, network, entry, approach, &spec.turn_probabilities);
            let is_emergency = rng.random::<f64>() < spec.emergency_fraction;
            arrivals.push(Arrival {
                time_s: t as u32,
                entry,
                approach,
                route,
                is_emergency,
            });
        }
    }
    // Sort by time; ties broken by entry arm for a stable spawn order.
    arrivals.sort_by_key(|a| (a.time_s, a.entry, a.approach));
    arrivals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::build_grid;

    #[test]
    fn rate_8000_yields_about_8000_arrivals() {
        let net = build_grid(4, 4, 300.0).unwrap();
        let spec = FlowSpec {
            total_rate_vph: 8000.0,
            seed: 7,
            ..FlowSpec::default()
        };
        let schedule = spawn_flow(&spec, &net, 3600);
        let n = schedule.len() as f64;
        // Poisson(8000): 3 sigma is ~268.
        assert!((n - 8000.0).abs() < 3.0 * 8000.0_f64.sqrt(), "got {n}");
    }

    #[test]
    fn zero_rate_yields_empty_schedule() {
        let net = build_grid(4, 4, 300.0).unwrap();
        let spec = FlowSpec {
            total_rate_vph: 0.0,
            ..FlowSpec::default()
        };
        assert!(spawn_flow(&spec, &net, 3600).is_empty());
    }

    #[test]
    fn schedule_is_deterministic_given_seed() {
        let net = build_grid(3, 4, 300.0).unwrap();
        let spec = FlowSpec {
            total_rate_vph: 2000.0,
            seed: 11,
            ..FlowSpec::default()
        };
        let a = spawn_flow(&spec, &net, 600);
        let b = spawn_flow(&spec, &net, 600);
        assert_eq!(a, b);
        let c = spawn_flow(&spec.with_seed(12), &net, 600);
        assert_ne!(a, c);
    }

    #[test]
    fn emergency_fraction_marks_expected_share() {
        let net = build_grid(4, 4, 300.0).unwrap();
        let spec = FlowSpec {
            total_rate_vph: 2983.0,
            seed: 3,
            emergency_fraction: 0.05,
            ..FlowSpec::default()
        };
        let schedule = spawn_flow(&spec, &net, 3600);
        let emergencies = schedule.iter().filter(|a| a.is_emergency).count() as f64;
        let expected = schedule.len() as f64 * 0.05;
        let sigma = (schedule.len() as f64 * 0.05 * 0.95).sqrt();
        assert!((emergencies - expected).abs() < 3.0 * sigma, "got {emergencies}, expected ~{expected}");

        let none = spawn_flow(&spec.with_emergency_fraction(0.0), &net, 3600);
        assert!(none.iter().all(|a| !a.is_emergency));
    }

    #[test]
    fn routes_are_connected_and_leave_the_grid() {
        let net = build_grid(3, 3, 300.0).unwrap();
        let spec = FlowSpec {
            total_rate_vph: 1000.0,
            seed: 5,
            ..FlowSpec::default()
        };
        for arrival in spawn_flow(&spec, &net, 300) {
            assert_eq!(arrival.route[0].0, arrival.entry);
            let mut arrive_on = arrival.approach;
            for (i, &(here, movement)) in arrival.route.iter().enumerate() {
                match net.next_hop(here, arrive_on, movement) {
                    Some((next, approach)) => {
                        assert_eq!(arrival.route[i + 1].0, next, "route must chain");
                        arrive_on = approach;
                    }
                    None => assert_eq!(i, arrival.route.len() - 1, "exit must be last hop"),
                }
            }
        }
    }
}
