//! Out-of-distribution evaluation: textual incidents scored by emergency
//! action accuracy (EAA) and network-wide emergency flows scored by
//! emergency-restricted travel and waiting times (AETT/AEWT).

use crate::agent::{DecisionPolicy, Prompt};
use crate::env::{run_episode, EpisodeConfig};
use crate::error::FixtureError;
use crate::net::{GridNetwork, IntersectionId, Phase, PHASES};
use crate::sim::{spawn_flow, FlowSpec, MetricsReport, Observation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::BufRead;
use std::path::Path;

/// Scope of an incident: a single intersection or the whole network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentScope {
    Local,
    NetworkWide,
}

/// A textual traffic incident with its accepted responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub id: String,
    pub text: String,
    /// Pinned intersection; absent means the evaluation samples one.
    pub location: Option<IntersectionId>,
    /// Nonempty set of acceptable phases.
    pub allowed_actions: Vec<Phase>,
    pub scope: IncidentScope,
}

impl Incident {
    fn validate(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            return Err("incident text must be nonempty".into());
        }
        if self.allowed_actions.is_empty() {
            return Err("allowed_actions must be nonempty".into());
        }
        Ok(())
    }
}

const BUILTIN_FIXTURES: &str = include_str!("../fixtures/incidents.jsonl");

/// The ten bundled incident fixtures.
pub fn builtin_fixtures() -> Vec<Incident> {
    parse_fixtures(BUILTIN_FIXTURES).expect("bundled fixtures parse")
}

fn parse_fixtures(text: &str) -> Result<Vec<Incident>, FixtureError> {
    let mut incidents = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let incident: Incident =
            serde_json::from_str(line).map_err(|e| FixtureError::Parse {
                line: idx + 1,
                detail: e.to_string(),
            })?;
        incident.validate().map_err(|detail| FixtureError::Parse {
            line: idx + 1,
            detail,
        })?;
        incidents.push(incident);
    }
    Ok(incidents)
}

/// Load incident fixtures from a line-delimited JSON file.
pub fn load_fixtures(path: &Path) -> Result<Vec<Incident>, FixtureError> {
    let file = std::fs::File::open(path)?;
    let mut text = String::new();
    for line in std::io::BufReader::new(file).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_fixtures(&text)
}

/// A policy that answers incident prompts. Textual policies should consult
/// only the prompt; the sampled observation is provided for backends that
/// are blind to text.
pub trait IncidentResponder {
    fn respond(&mut self, prompt: &Prompt, observation: &Observation) -> Option<Phase>;
}

/// Uniform-random responder.
pub struct RandomResponder {
    rng: ChaCha12Rng,
}

impl RandomResponder {
    pub fn seeded(seed: u64) -> Self {
        RandomResponder {
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }
}

impl IncidentResponder for RandomResponder {
    fn respond(&mut self, _prompt: &Prompt, _observation: &Observation) -> Option<Phase> {
        Some(PHASES[self.rng.random_range(0..4)])
    }
}

/// Rule-table oracle over a fixture list: matches the incident text inside
/// the rendered prompt and answers with the first allowed action.
pub struct RuleTableOracle {
    table: Vec<(String, Phase)>,
}

impl RuleTableOracle {
    pub fn over(incidents: &[Incident]) -> Self {
        RuleTableOracle {
            table: incidents
                .iter()
                .map(|i| (i.text.clone(), i.allowed_actions[0]))
                .collect(),
        }
    }
}

impl IncidentResponder for RuleTableOracle {
    fn respond(&mut self, prompt: &Prompt, _observation: &Observation) -> Option<Phase> {
        let block = prompt.incident_block.as_deref()?;
        self.table
            .iter()
            .find(|(text, _)| block.contains(text.as_str()))
            .map(|(_, phase)| *phase)
    }
}

/// Options for the EAA evaluation.
#[derive(Debug, Clone)]
pub struct EaaConfig {
    /// Seed for sampling the mid-congestion observations.
    pub seed: u64,
    pub segment_count: usize,
}

impl Default for EaaConfig {
    fn default() -> Self {
        EaaConfig {
            seed: 0,
            segment_count: crate::net::DEFAULT_SEGMENT_COUNT as usize,
        }
    }
}

/// Sample a plausible mid-congestion observation.
pub fn sample_observation(rng: &mut ChaCha12Rng, segment_count: usize) -> Observation {
    let mut obs = Observation::empty(IntersectionId::new(0, 0), segment_count);
    for counts in obs.phases.iter_mut() {
        for lane in counts.lanes.iter_mut() {
            lane.early_queued = rng.random_range(0..9);
            for s in lane.segments.iter_mut() {
                *s = rng.random_range(0..7);
            }
        }
    }
    for r in obs.right_turn_queued.iter_mut() {
        *r = rng.random_range(0..5);
    }
    obs
}

/// Emergency action accuracy: one policy query per incident over a sampled
/// observation, scored 1 iff the returned phase is allowed. A missing
/// action scores 0.
pub fn eval_eaa(
    responder: &mut dyn IncidentResponder,
    incidents: &[Incident],
    cfg: &EaaConfig,
) -> f64 {
    assert!(!incidents.is_empty(), "EAA needs at least one incident");
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut hits = 0usize;
    for incident in incidents {
        let observation = sample_observation(&mut rng, cfg.segment_count);
        let prompt =
            crate::agent::render_prompt(&observation, Some(incident.text.as_str()), &[]);
        let answer = responder.respond(&prompt, &observation);
        if answer.is_some_and(|phase| incident.allowed_actions.contains(&phase)) {
            hits += 1;
        }
    }
    hits as f64 / incidents.len() as f64
}

/// Mark each spawned vehicle as an emergency vehicle with the given
/// probability.
pub fn emergency_flow(spec: &FlowSpec, fraction: f64) -> FlowSpec {
    spec.with_emergency_fraction(fraction)
}

/// Run `episodes` seeded episodes (communication active per the episode
/// config) and return the mean emergency-restricted metrics (AETT, AEWT).
pub fn eval_network_wide<P: DecisionPolicy>(
    make_policies: &mut dyn FnMut(u64) -> Vec<P>,
    network: &GridNetwork,
    flow: &FlowSpec,
    episodes: usize,
    episode: &EpisodeConfig,
) -> (f64, f64) {
    assert!(episodes > 0);
    let reports = network_wide_reports(make_policies, network, flow, episodes, episode);
    let aett = reports.iter().map(|r| r.aett_s).sum::<f64>() / episodes as f64;
    let aewt = reports.iter().map(|r| r.aewt_s).sum::<f64>() / episodes as f64;
    (aett, aewt)
}

/// Per-episode reports behind [`eval_network_wide`].
pub fn network_wide_reports<P: DecisionPolicy>(
    make_policies: &mut dyn FnMut(u64) -> Vec<P>,
    network: &GridNetwork,
    flow: &FlowSpec,
    episodes: usize,
    episode: &EpisodeConfig,
) -> Vec<MetricsReport> {
    (0..episodes)
        .map(|i| {
            let seed = flow.seed.wrapping_add(i as u64);
            let schedule = spawn_flow(&flow.with_seed(seed), network, episode.horizon_s);
            let had_emergencies = schedule.iter().any(|a| a.is_emergency);
            let mut policies = make_policies(seed);
            let outcome = run_episode(network, schedule, &mut policies, episode, None);
            if had_emergencies && outcome.metrics.aett_s == 0.0 {
                log::warn!("no emergency vehicle completed in episode {i}; means are censored");
            }
            outcome.metrics
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::EmergencyPriorityAgent;
    use crate::agent::FixedTimeAgent;
    use crate::control::FixedTimePlan;
    use crate::net::build_grid;

    #[test]
    fn bundled_fixtures_cover_the_ten_cases() {
        let fixtures = builtin_fixtures();
        assert_eq!(fixtures.len(), 10);
        assert_eq!(fixtures[0].allowed_actions, vec![Phase::ETWT]);
        assert_eq!(fixtures[1].allowed_actions, vec![Phase::ETWT, Phase::NLSL]);
        assert!(fixtures.iter().all(|f| f.scope == IncidentScope::Local));
        assert!(fixtures.iter().all(|f| f.location.is_none()));
    }

    #[test]
    fn fixture_files_load_and_report_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("incidents.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_fixtures(&path).unwrap().is_empty());

        std::fs::write(
            &path,
            "{\"id\":\"1\",\"text\":\"x\",\"location\":null,\"allowed_actions\":[\"ETWT\"],\"scope\":\"local\"}\nnot json\n",
        )
        .unwrap();
        match load_fixtures(&path) {
            Err(FixtureError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        // Empty allowed_actions is invalid.
        std::fs::write(
            &path,
            "{\"id\":\"1\",\"text\":\"x\",\"location\":null,\"allowed_actions\":[],\"scope\":\"local\"}\n",
        )
        .unwrap();
        assert!(load_fixtures(&path).is_err());
    }

    #[test]
    fn oracle_scores_one_on_the_bundled_fixtures() {
        let fixtures = builtin_fixtures();
        let mut oracle = RuleTableOracle::over(&fixtures);
        let eaa = eval_eaa(&mut oracle, &fixtures, &EaaConfig::default());
        assert_eq!(eaa, 1.0);
    }

    #[test]
    fn multi_answer_incidents_accept_any_member() {
        let fixtures = builtin_fixtures();
        struct Always(Phase);
        impl IncidentResponder for Always {
            fn respond(&mut self, _: &Prompt, _: &Observation) -> Option<Phase> {
                Some(self.0)
            }
        }
        // Fixture 2 allows ETWT or NLSL.
        let two = &fixtures[1..2];
        assert_eq!(eval_eaa(&mut Always(Phase::NLSL), two, &EaaConfig::default()), 1.0);
        assert_eq!(eval_eaa(&mut Always(Phase::ETWT), two, &EaaConfig::default()), 1.0);
        assert_eq!(eval_eaa(&mut Always(Phase::ELWL), two, &EaaConfig::default()), 0.0);

        struct Mute;
        impl IncidentResponder for Mute {
            fn respond(&mut self, _: &Prompt, _: &Observation) -> Option<Phase> {
                None
            }
        }
        assert_eq!(eval_eaa(&mut Mute, two, &EaaConfig::default()), 0.0);
    }

    #[test]
    fn random_responder_sits_near_quarter_on_single_answer_incidents() {
        let single: Vec<Incident> = (0..200)
            .map(|i| Incident {
                id: format!("s{i}"),
                text: format!("Synthetic single-answer incident {i}."),
                location: None,
                allowed_actions: vec![PHASES[i % 4]],
                scope: IncidentScope::Local,
            })
            .collect();
        let mut responder = RandomResponder::seeded(40);
        let eaa = eval_eaa(&mut responder, &single, &EaaConfig::default());
        assert!((eaa - 0.25).abs() <= 0.05, "EAA {eaa}");
    }

    #[test]
    fn eaa_is_deterministic_given_seed() {
        let fixtures = builtin_fixtures();
        let run = || {
            let mut r = RandomResponder::seeded(9);
            eval_eaa(&mut r, &fixtures, &EaaConfig::default())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn emergency_flow_marks_the_fraction() {
        let spec = FlowSpec::default();
        assert_eq!(emergency_flow(&spec, 0.05).emergency_fraction, 0.05);
        assert_eq!(emergency_flow(&spec, 0.0).emergency_fraction, 0.0);
    }

    #[test]
    fn full_emergency_fraction_makes_emergency_metrics_equal_population() {
        let network = build_grid(2, 2, 300.0).unwrap();
        let flow = FlowSpec {
            total_rate_vph: 2000.0,
            seed: 31,
            emergency_fraction: 1.0,
            ..FlowSpec::default()
        };
        let episode = EpisodeConfig {
            horizon_s: 400,
            ..EpisodeConfig::default()
        };
        let reports = network_wide_reports(
            &mut |_| {
                network
                    .intersections()
                    .map(|_| FixedTimeAgent::new(FixedTimePlan::default()))
                    .collect::<Vec<_>>()
            },
            &network,
            &flow,
            2,
            &episode,
        );
        for r in reports {
            assert_eq!(r.aett_s, r.att_s);
            assert_eq!(r.aewt_s, r.awt_s);
            assert!(r.aewt_s <= r.aett_s);
        }
    }

    #[test]
    fn zero_traffic_gives_zero_emergency_metrics() {
        let network = build_grid(1, 1, 300.0).unwrap();
        let flow = FlowSpec {
            total_rate_vph: 0.0,
            emergency_fraction: 1.0,
            ..FlowSpec::default()
        };
        let episode = EpisodeConfig {
            horizon_s: 100,
            ..EpisodeConfig::default()
        };
        let (aett, aewt) = eval_network_wide(
            &mut |_| vec![FixedTimeAgent::new(FixedTimePlan::default())],
            &network,
            &flow,
            1,
            &episode,
        );
        assert_eq!((aett, aewt), (0.0, 0.0));
    }

    #[test]
    fn emergency_priority_beats_fixed_time_on_paired_seeds() {
        let network = build_grid(2, 2, 300.0).unwrap();
        let flow = FlowSpec {
            total_rate_vph: 3000.0,
            seed: 77,
            emergency_fraction: 0.05,
            ..FlowSpec::default()
        };
        let episode = EpisodeConfig {
            horizon_s: 600,
            ..EpisodeConfig::default()
        };
        let n = network.num_intersections();
        let fixed = network_wide_reports(
            &mut |_| {
                (0..n)
                    .map(|_| {
                        Box::new(FixedTimeAgent::new(FixedTimePlan::default()))
                            as Box<dyn DecisionPolicy>
                    })
                    .collect::<Vec<_>>()
            },
            &network,
            &flow,
            3,
            &episode,
        );
        let priority = network_wide_reports(
            &mut |_| {
                (0..n)
                    .map(|_| Box::new(EmergencyPriorityAgent) as Box<dyn DecisionPolicy>)
                    .collect::<Vec<_>>()
            },
            &network,
            &flow,
            3,
            &episode,
        );
        let mean = |rs: &[MetricsReport], f: fn(&MetricsReport) -> f64| {
            rs.iter().map(f).sum::<f64>() / rs.len() as f64
        };
        assert!(
            mean(&priority, |r| r.aewt_s) <= mean(&fixed, |r| r.aewt_s),
            "priority {} vs fixed {}",
            mean(&priority, |r| r.aewt_s),
            mean(&fixed, |r| r.aewt_s)
        );
    }
}
