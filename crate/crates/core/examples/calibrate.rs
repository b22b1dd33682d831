//! Scratch calibration runs for the training and baseline parameters.

use greenwave::agent::{
    FixedTimeAgent, MaxPressureAgent, ParametricAgent, ParametricPolicy, RandomAgent,
};
use greenwave::control::{max_pressure_next, FixedTimePlan};
use greenwave::env::{run_episode, EpisodeConfig};
use greenwave::net::build_grid;
use greenwave::rl::{
    evaluate_mean_reward, generate_expert_dataset, greedy_accuracy, grpo_train, online_train,
    OnlineSetup, TrainConfig,
};
use greenwave::sim::{spawn_flow, FlowSpec, MetricsReport, MovementCounts, Observation};
use std::sync::Arc;
use std::time::Instant;

fn run_with<P: greenwave::agent::DecisionPolicy>(
    net: &greenwave::net::GridNetwork,
    flow: &FlowSpec,
    horizon: u32,
    mut make: impl FnMut() -> Vec<P>,
    seeds: &[u64],
) -> Vec<MetricsReport> {
    seeds
        .iter()
        .map(|&s| {
            let schedule = spawn_flow(&flow.with_seed(s), net, horizon);
            let mut policies = make();
            run_episode(
                net,
                schedule,
                &mut policies,
                &EpisodeConfig {
                    horizon_s: horizon,
                    ..EpisodeConfig::default()
                },
                None,
            )
            .metrics
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    let net = build_grid(4, 4, 300.0).unwrap();

    if which == "baselines" || which == "all" {
        let t0 = Instant::now();
        let flow = FlowSpec {
            total_rate_vph: 4000.0,
            ..FlowSpec::default()
        };
        let seeds = [1u64, 2, 3, 4, 5];
        let n = net.num_intersections();
        let fixed = run_with(
            &net,
            &flow,
            3600,
            || {
                (0..n)
                    .map(|_| FixedTimeAgent::new(FixedTimePlan::default()))
                    .collect()
            },
            &seeds,
        );
        let maxp = run_with(&net, &flow, 3600, || (0..n).map(|_| MaxPressureAgent).collect(), &seeds);
        let f_att = mean(fixed.iter().map(|r| r.att_s));
        let m_att = mean(maxp.iter().map(|r| r.att_s));
        println!(
            "baselines: fixed ATT {f_att:.1} awt {:.1} | maxp ATT {m_att:.1} awt {:.1} | gap {:.1}% | {:?}",
            mean(fixed.iter().map(|r| r.awt_s)),
            mean(maxp.iter().map(|r| r.awt_s)),
            100.0 * (f_att - m_att) / f_att,
            t0.elapsed()
        );
    }

    if which == "grpo" || which == "all" {
        let t0 = Instant::now();
        let flow = FlowSpec {
            total_rate_vph: 5000.0,
            seed: 11,
            ..FlowSpec::default()
        };
        let episode = EpisodeConfig {
            horizon_s: 600,
            ..EpisodeConfig::default()
        };
        let oracle = |obs: &Observation| max_pressure_next(obs, &MovementCounts::default());
        let dataset = generate_expert_dataset(&net, &flow, oracle, 500, &episode);
        println!("dataset built in {:?}", t0.elapsed());

        let cfg = TrainConfig::default();
        let mut policy = ParametricPolicy::new(3);
        let t1 = Instant::now();
        let history = grpo_train(&dataset, &mut policy, &cfg).unwrap();
        let features: Vec<Vec<f64>> = dataset
            .iter()
            .map(|s| {
                greenwave::agent::featurize(
                    &s.observation,
                    &greenwave::agent::summarize_inbox(&[], &[]),
                )
            })
            .collect();
        let labels: Vec<_> = dataset.iter().map(|s| s.expert_action).collect();
        let acc = greedy_accuracy(&policy, &features, &labels);
        println!(
            "grpo: 200 iters in {:?}, final acc {acc:.3}, acc@50 {:.3}, acc@100 {:.3}, mean_reward last {:.3}",
            t1.elapsed(),
            history[49].accuracy.unwrap(),
            history[99].accuracy.unwrap(),
            history.last().unwrap().mean_reward
        );

        // Large-beta anchoring run.
        let mut anchored = ParametricPolicy::new(3);
        let init = anchored.clone();
        let cfg_beta = TrainConfig {
            kl_beta: 100.0,
            ref_refresh_every: 0,
            ..TrainConfig::default()
        };
        let t2 = Instant::now();
        grpo_train(&dataset, &mut anchored, &cfg_beta).unwrap();
        let kl = mean(features.iter().map(|x| anchored.kl_divergence(&init, x)));
        println!("grpo beta=100: KL(final||init) = {kl:.6} in {:?}", t2.elapsed());
    }

    if which == "stpo" || which == "all" {
        let t0 = Instant::now();
        let flow = FlowSpec {
            total_rate_vph: 3000.0,
            seed: 21,
            ..FlowSpec::default()
        };
        let episode = EpisodeConfig {
            horizon_s: 600,
            ..EpisodeConfig::default()
        };
        // Offline pre-training.
        let oracle = |obs: &Observation| max_pressure_next(obs, &MovementCounts::default());
        let dataset = generate_expert_dataset(&net, &flow, oracle, 300, &episode);
        let mut policy = ParametricPolicy::new(3);
        let cfg_off = TrainConfig {
            iterations: 150,
            ..TrainConfig::default()
        };
        grpo_train(&dataset, &mut policy, &cfg_off).unwrap();
        println!("offline stage done in {:?}", t0.elapsed());

        let setup = OnlineSetup {
            network: net.clone(),
            flow: flow.clone(),
            episode: episode.clone(),
        };
        let held_out = [101u64, 102, 103, 104, 105];
        let before = evaluate_mean_reward(&setup, &policy, &held_out, 777, 0.1);
        let t1 = Instant::now();
        let cfg_on = TrainConfig {
            iterations: 100,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let history = online_train(&setup, &mut policy, &cfg_on).unwrap();
        let after = evaluate_mean_reward(&setup, &policy, &held_out, 777, 0.1);
        println!(
            "stpo: 100 iters in {:?}; held-out R before {before:.4} after {after:.4}; train R first {:.3} last {:.3}",
            t1.elapsed(),
            history.first().unwrap().mean_reward,
            history.last().unwrap().mean_reward
        );

        // ATT of trained policy vs random on the held-out seeds.
        let n = net.num_intersections();
        let shared = Arc::new(policy.clone());
        let trained = run_with(
            &net,
            &flow,
            600,
            || {
                (0..n)
                    .map(|i| ParametricAgent::new(shared.clone(), 900 + i as u64))
                    .collect()
            },
            &held_out,
        );
        let random = run_with(
            &net,
            &flow,
            600,
            || (0..n).map(|i| RandomAgent::seeded(300 + i as u64)).collect(),
            &held_out,
        );
        let t_att = mean(trained.iter().map(|r| r.att_s));
        let r_att = mean(random.iter().map(|r| r.att_s));
        println!(
            "stpo: trained ATT {t_att:.1} vs random ATT {r_att:.1} ({:.1}% below)",
            100.0 * (r_att - t_att) / r_att
        );
    }
}
